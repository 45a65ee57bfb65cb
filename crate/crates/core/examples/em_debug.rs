use nalgebra::DVector;
use tvsbl::linops::{build_tv_1d, pseudoinverse, ShiftStrategy};
use tvsbl::noise::{add_noise, relative_error};
use tvsbl::phantoms::shepp_logan_slice;
use tvsbl::sbl::{posterior_moments, sbl_fast, SblConfig, SblHyperparams};
use tvsbl::solvers::{
    default_lambda_grid, lambda_sweep, Forward, SolverOptions, SweepProblem, SweepSolver,
    SynthesisModel,
};

fn run_em(beta0: f64, warmup: usize, model: &SynthesisModel, b: &DVector<f64>) -> (SblHyperparams, DVector<f64>) {
    let m_len = b.len() - 1;
    let j_eff = m_len as f64;
    let mut hyper = SblHyperparams::uniform(m_len, 1.0, beta0);
    for it in 0..2000 {
        let (m, sigma) = posterior_moments(model, b, &hyper).unwrap();
        let mut a_new = hyper.a.clone();
        let mut gamma_sum = 0.0;
        let mut max_rel: f64 = 0.0;
        for i in 0..m_len {
            if !hyper.a[i].is_finite() { continue; }
            let g = 1.0 - hyper.a[i] * sigma[(i, i)];
            gamma_sum += g;
            let cand = g / (m[i] * m[i]);
            if cand.is_finite() && cand > 0.0 && cand <= 1e12 {
                max_rel = max_rel.max((cand - hyper.a[i]).abs() / hyper.a[i]);
                a_new[i] = cand;
            } else { a_new[i] = f64::INFINITY; }
        }
        let beta_new = if it < warmup { hyper.beta } else {
            let r = b - model.dictionary() * &m;
            let numer = j_eff - gamma_sum;
            if numer > 0.0 && r.norm_squared() > 0.0 { (numer / r.norm_squared()).min(1e12) } else { 1e12 }
        };
        let rel_b = (beta_new - hyper.beta).abs() / hyper.beta;
        hyper = SblHyperparams { a: a_new, beta: beta_new, gamma: hyper.gamma.clone() };
        if it > warmup && max_rel.max(rel_b) < 1e-6 { break; }
    }
    let (m, _) = posterior_moments(model, b, &hyper).unwrap();
    (hyper, m)
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    (s[s.len() / 2 - (1 - s.len() % 2)] + s[s.len() / 2]) / 2.0
}

fn main() {
    let truth = shepp_logan_slice(128).unwrap();
    let op = build_tv_1d(128).unwrap();
    let synth = pseudoinverse(&op).unwrap();
    let seeds: Vec<u64> = (0..10).collect();
    for snr in [6.4, 0.9] {
        let mut analysis_re = Vec::new();
        for &seed in &seeds {
            let obs = add_noise(&truth.samples, snr, seed).unwrap();
            let model = SynthesisModel::new(Forward::Identity, &synth,
                ShiftStrategy::NoisyDataMean(obs.data.clone())).unwrap();
            let grid = default_lambda_grid(&model, &obs.data);
            let problem = SweepProblem { op: &op, model: &model, data: &obs.data, opts: SolverOptions::default() };
            let out = lambda_sweep(SweepSolver::AnalysisTv, &problem, &grid, &truth.samples).unwrap();
            analysis_re.push(relative_error(&out.best.restoration, &truth.samples).unwrap());
        }
        println!("SNR {snr}: analysis oracle median {:.4} {:?}", median(&analysis_re),
            analysis_re.iter().map(|r| (r * 100.0).round() / 100.0).collect::<Vec<_>>());

        // Warm-up EM
        let mut em_re = Vec::new();
        let mut wins = 0;
        let mut ks = Vec::new();
        for (si, &seed) in seeds.iter().enumerate() {
            let obs = add_noise(&truth.samples, snr, seed).unwrap();
            let model = SynthesisModel::new(Forward::Identity, &synth,
                ShiftStrategy::NoisyDataMean(obs.data.clone())).unwrap();
            let (b, shift) = model.fittable_data(&obs.data);
            let mean_b = obs.data.mean();
            let var: f64 = obs.data.iter().map(|v| (v - mean_b).powi(2)).sum::<f64>() / 128.0;
            let (hyper, m) = run_em(1.0 / var, 100, &model, &b);
            let restored = synth.apply(&m).add_scalar(shift);
            let re = relative_error(&restored, &truth.samples).unwrap();
            if re < analysis_re[si] { wins += 1; }
            ks.push(hyper.a.iter().filter(|v| v.is_finite()).count());
            em_re.push(re);
        }
        println!("         warmup-EM median {:.4} wins {wins}/10 K {:?} {:?}", median(&em_re), ks,
            em_re.iter().map(|r| (r * 100.0).round() / 100.0).collect::<Vec<_>>());

        // fast(default) for reference
        let mut f_re = Vec::new();
        for &seed in &seeds {
            let obs = add_noise(&truth.samples, snr, seed).unwrap();
            let model = SynthesisModel::new(Forward::Identity, &synth,
                ShiftStrategy::NoisyDataMean(obs.data.clone())).unwrap();
            let p = sbl_fast(&model, &obs.data, &SblConfig::default()).unwrap();
            let (restored, _) = model.synthesize_with_shift(&p.mean).unwrap();
            f_re.push(relative_error(&restored, &truth.samples).unwrap());
        }
        println!("         fast default median {:.4} {:?}", median(&f_re),
            f_re.iter().map(|r| (r * 100.0).round() / 100.0).collect::<Vec<_>>());
    }
}
