//! One line per acceptance criterion. Runs without the libtest harness so
//! the lines are printed on every `cargo test`.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::gamma_cdf_quadrature;
use common::recursion::{oracle_settling, oracle_step};
use common::toy::{toy_graph, toy_quadrature, TOY};
use hlc_core::audio::{apply_gain, tone, FrameConfig};
use hlc_core::dist::{gaussian_product, GaussianMessage};
use hlc_core::ffg::{FactorKind, Graph, Message, Rule};
use hlc_core::hada::{Agent, AgentConfig, IoBuffer, Polarity};
use hlc_core::mc::{compare_models, NestingSpec};
use hlc_core::model::{synthesize, GainProcess, HearingLossParams, SyntheticSpec};
use hlc_core::pe::{estimate, estimate_detailed, PeConfig, PosteriorSet, TrainingSet};
use hlc_core::sp::{characterize, kalman_step, run_sequence, sp_message_step};
use hlc_core::{GainState, GammaMessage, Theta, ThetaPriors};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn theta() -> Theta {
    Theta::new(2.0, -90.0, 10.0, 1.0).unwrap()
}

fn compression_ratio() -> Check {
    let started = Instant::now();
    let c = characterize(&theta(), 55.0, 80.0).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    verdict(
        (c.compression_ratio - 2.0).abs() <= 1e-6 && secs < 1.0,
        format!("CR = {:.9} (tol 1e-6), {secs:.3} s (limit 1 s)", c.compression_ratio),
    )
}

fn steady_gains() -> Check {
    let c = characterize(&theta(), 55.0, 80.0).map_err(|e| e.to_string())?;
    let g = |level: f64| c.steady_gain_per_level.iter().find(|p| p.0 == level).map(|p| p.1).unwrap_or(f64::NAN);
    let (low, high) = (g(55.0), g(80.0));
    verdict(
        (low - 17.5).abs() <= 0.01 && (high - 5.0).abs() <= 0.01,
        format!("g(55) = {low:.5} dB, g(80) = {high:.5} dB (tol 0.01)"),
    )
}

fn schedule_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let th = Theta::new(
            rng.random_range(1.2..3.5),
            rng.random_range(-140.0..-30.0),
            rng.random_range(0.5..30.0),
            rng.random_range(0.05..20.0),
        )
        .unwrap();
        let prior = GainState::new(rng.random_range(-20.0..40.0), rng.random_range(0.01..100.0)).unwrap();
        let s = rng.random_range(0.0..120.0);
        let h = th.hearing;
        let (m, v) = oracle_step((prior.mean, prior.variance), s, h.alpha, h.beta, th.obs_variance, th.gain_precision);
        let mp = sp_message_step(prior, s, &th).map_err(|e| e.to_string())?;
        let kf = kalman_step(prior, s, &th).map_err(|e| e.to_string())?;
        for d in [mp.mean - m, mp.variance - v, kf.mean - m, kf.variance - v] {
            worst = worst.max(d.abs());
        }
    }
    verdict(worst < 1e-9, format!("10^4 random steps, max deviation {worst:.2e} (tol 1e-9)"))
}

fn attack_release() -> Check {
    let c = characterize(&theta(), 55.0, 80.0).map_err(|e| e.to_string())?;
    let (attack, release) = (oracle_settling(55.0, 80.0), oracle_settling(80.0, 55.0));
    let frames = FrameConfig::default();
    verdict(
        c.attack_steps == attack && c.release_steps == release,
        format!(
            "attack {} steps (oracle {attack}, {:.0} ms), release {} steps (oracle {release}, {:.0} ms)",
            c.attack_steps,
            frames.steps_to_ms(c.attack_steps),
            c.release_steps,
            frames.steps_to_ms(c.release_steps),
        ),
    )
}

fn pe_recovery() -> Check {
    let target = HearingLossParams::new(2.0, -90.0).unwrap();
    let spec = SyntheticSpec::new(target, 2000, GainProcess::UniformLevels { low: 30.0, high: 100.0 });
    let data = synthesize(&spec).map_err(|e| e.to_string())?;
    let priors = ThetaPriors::default();
    let started = Instant::now();
    let post = estimate(&data, &priors, &PeConfig { iterations: 200, ..PeConfig::default() })
        .map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    let (a, b) = (post.q_alpha.mean(), post.q_beta.mean());
    let tighter = post.q_alpha.variance() < priors.alpha.variance() && post.q_beta.variance() < priors.beta.variance();
    verdict(
        (a - 2.0).abs() <= 0.3 && (b + 90.0).abs() <= 15.0 && tighter && secs < 30.0,
        format!(
            "alpha {a:.3} (2 ± 0.3), beta {b:.2} (-90 ± 15), var(alpha) {:.2e}, var(beta) {:.2e}, {secs:.2} s",
            post.q_alpha.variance(),
            post.q_beta.variance()
        ),
    )
}

fn pe_empty() -> Check {
    let priors = ThetaPriors::default();
    let est = estimate_detailed(&TrainingSet::default(), &priors, &PeConfig::default()).map_err(|e| e.to_string())?;
    verdict(est.posterior == PosteriorSet::from(priors), "posterior equals prior".into())
}

fn mc_sign() -> Check {
    let target = HearingLossParams::new(2.0, -90.0).unwrap();
    let data = |process| {
        synthesize(&SyntheticSpec { noise_sd: 0.3, ..SyntheticSpec::new(target, 600, process) }).unwrap()
    };
    let cfg = PeConfig { iterations: 100, ..PeConfig::default() };
    let (priors, spec) = (ThetaPriors::default(), NestingSpec::default());
    let with = compare_models(&data(GainProcess::RandomWalk { precision: 1.0, low: 1.0, high: 44.0 }), &priors, &spec, &cfg)
        .map_err(|e| e.to_string())?;
    let without = compare_models(&data(GainProcess::Independent { low: 1.0, high: 44.0 }), &priors, &spec, &cfg)
        .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (a, b) in [(10.0, 1.0), (0.5, 3.0), (2.0, 0.1), (110.45, 117.5)] {
        let g = GammaMessage::new(a, b).unwrap();
        for omega in [0.05, 0.25, 1.0, 4.0].into_iter().filter(|w| b * w <= 50.0) {
            worst = worst.max((g.cdf(omega).unwrap() - gamma_cdf_quadrature(a, b * omega)).abs());
        }
    }
    verdict(
        with.deci_hartley < 0.0 && without.deci_hartley > with.deci_hartley && worst < 1e-8,
        format!(
            "constrained {:.1} dHart, unconstrained {:.1} dHart, CDF vs quadrature {worst:.1e} (tol 1e-8)",
            with.deci_hartley, without.deci_hartley
        ),
    )
}

fn ffg_core() -> Check {
    let mut toy = toy_graph(TOY);
    toy.graph.execute(&toy.schedule).map_err(|e| e.to_string())?;
    let oracle = toy_quadrature(TOY, 64);
    let mut worst = 0.0f64;
    for (j, &(mean, var)) in oracle.iter().enumerate() {
        let m = toy.graph.marginal(toy.x[j]).map_err(|e| e.to_string())?;
        let g = m.as_gaussian().ok_or("non-Gaussian marginal")?;
        worst = worst.max((g.mean() - mean).abs()).max((g.variance() - var).abs());
    }

    // Node rules against their closed forms, compared bit for bit.
    let (a, b) = (GaussianMessage::new(1.0, 2.0).unwrap(), GaussianMessage::new(-3.0, 0.5).unwrap());
    let run = |kind: FactorKind| -> Result<GaussianMessage, String> {
        let mut g = Graph::new();
        let e = [g.add_edge("a"), g.add_edge("b"), g.add_edge("c")];
        g.add_node("pa", FactorKind::Prior(Message::Gaussian(a)), &[e[0]]).unwrap();
        g.add_node("pb", FactorKind::Prior(Message::Gaussian(b)), &[e[1]]).unwrap();
        let n = g.add_node("n", kind, &e).unwrap();
        let mut s = hlc_core::ffg::Schedule::new();
        s.push(n, e[2], Rule::SumProduct);
        g.execute(&s).map_err(|e| e.to_string())?;
        let out = g.outgoing(n, e[2]).ok_or("message not computed")?;
        Ok(out.as_gaussian().ok_or("non-Gaussian message")?)
    };
    let eq = run(FactorKind::Equality)?;
    let add = run(FactorKind::Addition)?;
    let want_eq = gaussian_product(&a, &b).unwrap();
    let exact = eq == want_eq && add.mean() == a.mean() + b.mean() && add.variance() == a.variance() + b.variance();
    verdict(
        worst < 1e-6 && exact,
        format!("toy marginals max error {worst:.2e} (tol 1e-6), equality/addition exact: {exact}"),
    )
}

fn hada_determinism() -> Check {
    let script = [
        Polarity::Negative,
        Polarity::Positive,
        Polarity::Negative,
        Polarity::Negative,
        Polarity::Positive,
        Polarity::Negative,
    ];
    let session = || -> Result<(Vec<[u64; 4]>, usize), String> {
        let cfg = AgentConfig { seed: 11, pe: PeConfig { iterations: 50, ..PeConfig::default() }, ..AgentConfig::default() };
        let mut agent = Agent::new(cfg).map_err(|e| e.to_string())?;
        for &p in &script {
            let levels: Vec<f64> = (0..400).map(|k| if (k / 50) % 2 == 0 { 55.0 } else { 80.0 }).collect();
            let gains = run_sequence(&levels, &agent.trial().theta, GainState::default()).map_err(|e| e.to_string())?;
            let mut buf = IoBuffer::new(levels.len());
            for (s, g) in levels.iter().zip(&gains) {
                buf.push(*s, g.mean);
            }
            agent.on_appraisal(p, &buf).map_err(|e| e.to_string())?;
        }
        let bits = agent
            .history()
            .iter()
            .map(|t| {
                let th = t.theta;
                [th.hearing.alpha, th.hearing.beta, th.obs_variance, th.gain_precision].map(f64::to_bits)
            })
            .collect();
        Ok((bits, agent.db().len()))
    };
    let (a, db) = session()?;
    let (b, _) = session()?;
    let positives = script.iter().filter(|&&p| p == Polarity::Positive).count();
    verdict(
        a == b && db == positives,
        format!("{} trials bit-identical: {}, DB {db} segments for {positives} positive appraisals", a.len(), a == b),
    )
}

fn audio_identity() -> Check {
    let cfg = FrameConfig::default();
    let x = tone(1000.0, 70.0, 16_000, &cfg);
    let frames = cfg.frame_count(x.len());
    let same = apply_gain(&x, &vec![0.0; frames], &cfg).map_err(|e| e.to_string())?.samples;
    let identity = x.iter().zip(&same).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let doubled = apply_gain(&x, &vec![6.02; frames], &cfg).map_err(|e| e.to_string())?.samples;
    let ratio = doubled.iter().zip(&x).filter(|(_, a)| a.abs() > 1e-3).map(|(b, a)| b / a).fold(0.0, |m: f64, r| {
        m.max((r - 2.0).abs())
    });
    verdict(
        identity <= 1e-12 && ratio < 1e-3,
        format!("zero gain max error {identity:.1e} (tol 1e-12), +6.02 dB amplitude ratio off 2 by {ratio:.1e}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("compression ratio", compression_ratio),
        ("steady gains", steady_gains),
        ("schedule/Kalman equivalence", schedule_equivalence),
        ("attack/release", attack_release),
        ("PE recovery", pe_recovery),
        ("PE empty training set", pe_empty),
        ("MC sign test", mc_sign),
        ("FFG core", ffg_core),
        ("HADA determinism", hada_determinism),
        ("audio identity", audio_identity),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} acceptance criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
