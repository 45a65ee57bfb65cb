use std::time::Instant;
use tvsbl::linops::{build_tv_2d, pseudoinverse, ShiftStrategy};
use tvsbl::noise::{add_noise, relative_error};
use tvsbl::phantoms::shepp_logan_2d;
use tvsbl::sbl::{sbl_fast, SblConfig};
use tvsbl::solvers::{Forward, SynthesisModel};

fn main() {
    let side: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(32);
    let phantom = shepp_logan_2d(side).unwrap();
    let x = phantom.to_vector();
    let op = build_tv_2d(side).unwrap();
    let synth = pseudoinverse(&op).unwrap();
    let edges = op.apply(&x).iter().filter(|v| v.abs() > 1e-12).count();
    let obs = add_noise(&x, 8.5, 0).unwrap();
    let model = SynthesisModel::new(Forward::Identity, &synth,
        ShiftStrategy::NoisyDataMean(obs.data.clone())).unwrap();
    println!("side {side}: edges {edges}, noisy RE {:.4}", relative_error(&obs.data, &x).unwrap());
    let t1 = Instant::now();
    let p = sbl_fast(&model, &obs.data, &SblConfig::default()).unwrap();
    let (restored, _) = model.synthesize_with_shift(&p.mean).unwrap();
    println!("sbl_fast: {:?}, actions {}, K {}, RE {:.4}",
        t1.elapsed(), p.iterations, p.mean.len() - p.pruned.len(),
        relative_error(&restored, &x).unwrap());
}
