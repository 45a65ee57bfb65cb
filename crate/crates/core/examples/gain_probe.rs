use nalgebra::DVector;
use tvsbl::linops::{build_tv_1d, pseudoinverse, ShiftStrategy};
use tvsbl::noise::{add_noise, relative_error};
use tvsbl::phantoms::shepp_logan_slice;
use tvsbl::sbl::{difference_mad_precision, posterior_moments, SblHyperparams};
use tvsbl::solvers::{Forward, SynthesisModel};

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    (s[s.len() / 2 - (1 - s.len() % 2)] + s[s.len() / 2]) / 2.0
}

fn main() {
    let truth = shepp_logan_slice(128).unwrap();
    let op = build_tv_1d(128).unwrap();
    let synth = pseudoinverse(&op).unwrap();
    for snr in [6.4_f64, 0.9] {
        for beta_mode in ["fixed-mad", "update-from-mad"] {
            let mut res = Vec::new();
            let mut ks = Vec::new();
            for seed in 0..20u64 {
                let obs = add_noise(&truth.samples, snr, seed).unwrap();
                let model = SynthesisModel::new(Forward::Identity, &synth,
                    ShiftStrategy::NoisyDataMean(obs.data.clone())).unwrap();
                let (b, shift) = model.fittable_data(&obs.data);
                let beta0 = difference_mad_precision(&obs.data).unwrap();
                let mut hyper = SblHyperparams::uniform(127, 1.0, beta0);
                let j_eff = 127.0;
                for it in 0..2000 {
                    let (m, sigma) = posterior_moments(&model, &b, &hyper).unwrap();
                    let mut a_new = hyper.a.clone();
                    let mut gamma_sum = 0.0;
                    let mut max_rel: f64 = 0.0;
                    for i in 0..127 {
                        if !hyper.a[i].is_finite() { continue; }
                        let g = 1.0 - hyper.a[i] * sigma[(i, i)];
                        gamma_sum += g;
                        let cand = g / (m[i] * m[i]);
                        if cand.is_finite() && cand > 0.0 && cand <= 1e12 {
                            max_rel = max_rel.max((cand - hyper.a[i]).abs() / hyper.a[i]);
                            a_new[i] = cand;
                        } else { a_new[i] = f64::INFINITY; }
                    }
                    let beta_new = if beta_mode == "fixed-mad" { hyper.beta } else {
                        let r = &b - model.dictionary() * &m;
                        let numer = j_eff - gamma_sum;
                        if numer > 0.0 && r.norm_squared() > 0.0 {
                            (numer / r.norm_squared()).min(1e12) } else { 1e12 }
                    };
                    let rel_b = (beta_new - hyper.beta).abs() / hyper.beta;
                    hyper = SblHyperparams { a: a_new, beta: beta_new, gamma: hyper.gamma.clone() };
                    if it > 0 && max_rel.max(rel_b) < 1e-6 { break; }
                }
                let (m, _) = posterior_moments(&model, &b, &hyper).unwrap();
                let restored = synth.apply(&m).add_scalar(shift);
                res.push(relative_error(&restored, &truth.samples).unwrap());
                ks.push(hyper.a.iter().filter(|v| v.is_finite()).count());
            }
            let kmed = { let mut k = ks.clone(); k.sort(); k[10] };
            println!("snr {snr} {beta_mode:16}: median {:.4} Kmed {kmed} REs {:?}",
                median(&res),
                res.iter().take(12).map(|r| (r * 100.0).round() / 100.0).collect::<Vec<_>>());
        }
    }
}
