use tvsbl::linops::{build_tv_1d, pseudoinverse, ShiftStrategy};
use tvsbl::noise::{add_noise, relative_error};
use tvsbl::phantoms::shepp_logan_slice;
use tvsbl::sbl::{sbl_em, sbl_fast, SblConfig};
use tvsbl::solvers::{
    default_lambda_grid, lambda_sweep, Forward, SolverOptions, SweepProblem, SweepSolver,
    SynthesisModel,
};

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    (s[s.len() / 2 - (1 - s.len() % 2)] + s[s.len() / 2]) / 2.0
}

fn main() {
    let truth = shepp_logan_slice(128).unwrap();
    let op = build_tv_1d(128).unwrap();
    let synth = pseudoinverse(&op).unwrap();
    let seeds: Vec<u64> = (0..20).collect();
    for snr in [6.4_f64, 0.9] {
        let mut analysis_re = Vec::new();
        let mut fast_re = Vec::new();
        let mut em_re = Vec::new();
        let mut ks = Vec::new();
        for &seed in &seeds {
            let obs = add_noise(&truth.samples, snr, seed).unwrap();
            let model = SynthesisModel::new(Forward::Identity, &synth,
                ShiftStrategy::NoisyDataMean(obs.data.clone())).unwrap();
            let grid = default_lambda_grid(&model, &obs.data);
            let problem = SweepProblem { op: &op, model: &model, data: &obs.data, opts: SolverOptions::default() };
            let out = lambda_sweep(SweepSolver::AnalysisTv, &problem, &grid, &truth.samples).unwrap();
            analysis_re.push(relative_error(&out.best.restoration, &truth.samples).unwrap());

            let config = SblConfig::default();
            let pf = sbl_fast(&model, &obs.data, &config).unwrap();
            let (rf, _) = model.synthesize_with_shift(&pf.mean).unwrap();
            fast_re.push(relative_error(&rf, &truth.samples).unwrap());

            let pe = sbl_em(&model, &obs.data, &config).unwrap();
            let (re_sig, _) = model.synthesize_with_shift(&pe.mean).unwrap();
            em_re.push(relative_error(&re_sig, &truth.samples).unwrap());
            ks.push(pe.mean.len() - pe.pruned.len());
        }
        let wins = em_re.iter().zip(&analysis_re).filter(|(e, a)| e < a).count();
        println!("SNR {snr}:");
        println!("  analysis median {:.4}", median(&analysis_re));
        println!("  fast     median {:.4}", median(&fast_re));
        println!("  em       median {:.4}  wins {wins}/20  K {:?}", median(&em_re), ks);
        println!("  em REs {:?}", em_re.iter().map(|r| (r * 100.0).round() / 100.0).collect::<Vec<_>>());
    }
}
