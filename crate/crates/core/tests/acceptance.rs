//! Acceptance suite. Each criterion prints one PASS/FAIL line. Failures make
//! the process exit non-zero only when `MASIM_ACCEPTANCE_STRICT` is set, so a
//! plain `cargo test` reports the verdicts without stopping the run.

use std::process::ExitCode;
use std::time::Instant;

use masim_core::beamforming::{
    build_parametric_w, extract_params, mrt, refine_params, sum_rate, wmmse, zf, BeamformerConfig,
};
use masim_core::estimation::{
    build_dictionary, estimate_user, nmse, sample_on_grid_user, somp, synthesize_pilots,
    CePattern, PatternKind, PilotConfig,
};
use masim_core::experiments::{
    net_rate, run_sweep_to_strings, summarize, ExperimentConfig, ExperimentKind, NetRateConfig, ScenarioParams,
    BeamformerKind, SelectorKind, SweepAxis,
};
use masim_core::scenario::{build_channel_tensor, build_grid, ChannelTensor, OfdmConfig};
use masim_core::selection::{
    apply_assignment, ceo_select, exhaustive_select, greedy_select, random_select, CeoParams, EquivalentChannelTensor,
    PositionAssignment, RateOracle, ZfOracle, DEFAULT_ENUMERATION_LIMIT,
};
use masim_core::seed::{stream_rng, trial_seed, Stream};

struct Outcome {
    pass: bool,
    detail: String,
}

fn somp_exact_recovery() -> Outcome {
    let ofdm = OfdmConfig::default_mmwave();
    let params = ScenarioParams::default();
    let grid = build_grid(8, 8, params.spacing().unwrap()).unwrap();
    let g = 16;
    let dict = build_dictionary(&grid, g, ofdm.wavelength()).unwrap();
    let pattern = CePattern::from_indices(PatternKind::UpaSubgrid, (0..64).collect(), 64).unwrap();
    let noiseless = PilotConfig::new(1.0, 0.0).unwrap();
    let (mut recovered, mut worst) = (0, 0.0f64);
    for t in 0..100u64 {
        let seed = trial_seed(2024, 0, t);
        let l = 1 + (t % 4) as usize;
        let mut rng = stream_rng(seed, Stream::Scenario);
        let (user, atoms) = sample_on_grid_user(&mut rng, g, l, ofdm.bandwidth()).unwrap();
        let truth = build_channel_tensor(std::slice::from_ref(&user), &grid, &ofdm).unwrap();
        let obs = synthesize_pilots(&truth, &pattern, &noiseless, &mut stream_rng(seed, Stream::PilotNoise)).unwrap();
        let out = somp(&obs.per_user[0], &dict.sensing_matrix(pattern.indices()), l).unwrap();
        let mut got = out.support.clone();
        let mut want = atoms.clone();
        got.sort_unstable();
        want.sort_unstable();
        if got == want {
            recovered += 1;
        }
        let est = estimate_user(&obs.per_user[0], &dict, &pattern, l).unwrap();
        let (n, nc) = est.initial_csi.shape();
        let est_t = ChannelTensor::from_values(n, 1, nc, (0..n).flat_map(|r| (0..nc).map(move |q| (r, q))).map(|(r, q)| est.initial_csi[(r, q)]).collect()).unwrap();
        worst = worst.max(nmse(&est_t, &truth).unwrap());
    }
    Outcome {
        pass: recovered == 100 && worst < 1e-16,
        detail: format!("support recovered {recovered}/100, worst NMSE {worst:.3e} (need 100/100, < 1e-16)"),
    }
}

fn nmse_monotonicity() -> Outcome {
    let mut cfg = ExperimentConfig::new(
        ExperimentKind::Ce,
        ScenarioParams { j: 32, ..ScenarioParams::default() },
        SweepAxis::PilotSnrDb,
        vec![0.0, 10.0, 20.0, 30.0],
    );
    cfg.patterns = vec![PatternKind::UpaSubgrid];
    cfg.trials = 200;
    cfg.base_seed = 11;
    let (_, _, records) = run_sweep_to_strings(&cfg, 0).unwrap();
    let rows = summarize(&records);
    let means: Vec<f64> = rows.iter().map(|r| r.nmse.expect("nmse").0).collect();
    let all_ok = rows.iter().all(|r| r.ok_trials == r.trials);
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    let reduction_db = 10.0 * (means[0] / means[3]).log10();
    let db: Vec<String> = means.iter().map(|m| format!("{:.2}", 10.0 * m.log10())).collect();
    Outcome {
        pass: all_ok && decreasing && reduction_db >= 10.0,
        detail: format!(
            "mean NMSE [{}] dB at 0/10/20/30 dB, strictly decreasing: {decreasing}, reduction {reduction_db:.2} dB (need ≥ 10)",
            db.join(", ")
        ),
    }
}

/// Equivalent channel of a default scenario with `k` users and `nc`
/// subcarriers, seen through `m` randomly chosen positions.
fn instance(seed: u64, k: usize, m: usize, nc: usize) -> EquivalentChannelTensor {
    let params = ScenarioParams { nc, k, m, ..ScenarioParams::default() };
    let scenario = params.sample_scenario(&mut stream_rng(seed, Stream::Scenario), k).unwrap();
    let t = scenario.tensor().unwrap();
    let a = random_select(&mut stream_rng(seed, Stream::Selection), t.num_positions(), m).unwrap();
    apply_assignment(&t, &a).unwrap()
}

fn wmmse_contract() -> Outcome {
    let cfg = BeamformerConfig::from_snr_db(10.0);
    let (mut monotone, mut power_ok, mut beats_zf) = (0, 0, 0);
    let mut worst_drop = 0.0f64;
    for t in 0..100u64 {
        let e = instance(trial_seed(3030, 0, t), 4, 4, 8);
        let (w, state) = wmmse(&e, &cfg, &mrt(&e, cfg.transmit_power)).unwrap();
        let drop = state.rate_trace.windows(2).map(|p| p[0] - p[1]).fold(0.0, f64::max);
        worst_drop = worst_drop.max(drop);
        if drop <= 1e-9 {
            monotone += 1;
        }
        if w.max_power_error(cfg.transmit_power) <= 1e-6 * cfg.transmit_power {
            power_ok += 1;
        }
        let r = sum_rate(&e, &w, cfg.noise_power).unwrap();
        let rz = sum_rate(&e, &zf(&e, cfg.transmit_power).unwrap().solution, cfg.noise_power).unwrap();
        if r >= rz {
            beats_zf += 1;
        }
    }
    Outcome {
        pass: monotone == 100 && power_ok == 100 && beats_zf >= 90,
        detail: format!(
            "monotone traces {monotone}/100 (largest drop {worst_drop:.2e}), power within 1e-6·P_t {power_ok}/100, WMMSE ≥ ZF {beats_zf}/100 (need ≥ 90)"
        ),
    }
}

fn single_user_closed_form() -> Outcome {
    let mut cfg = BeamformerConfig::from_snr_db(10.0);
    cfg.rate_tolerance = 1e-12;
    let mut worst = 0.0f64;
    for t in 0..100u64 {
        let e = instance(trial_seed(4040, 0, t), 1, 4, 8);
        let (w, _) = wmmse(&e, &cfg, &mrt(&e, cfg.transmit_power)).unwrap();
        let got = sum_rate(&e, &w, cfg.noise_power).unwrap();
        let want = (0..e.num_subcarriers())
            .map(|q| {
                let energy: f64 = e.subcarrier(q).iter().map(|z| z.norm_sqr()).sum();
                (1.0 + cfg.transmit_power * energy / cfg.noise_power).log2()
            })
            .sum::<f64>()
            / e.num_subcarriers() as f64;
        worst = worst.max((got - want).abs());
    }
    Outcome { pass: worst <= 1e-6, detail: format!("largest deviation {worst:.3e} bits (need ≤ 1e-6)") }
}

fn parametric_round_trip() -> Outcome {
    let cfg = BeamformerConfig::from_snr_db(10.0);
    let two = BeamformerConfig { max_iterations: 2, ..cfg };
    let (mut worst_trip, mut decreases, mut close) = (0.0f64, 0, 0);
    for t in 0..100u64 {
        let e = instance(trial_seed(5050, 0, t), 4, 4, 8);
        let init = mrt(&e, cfg.transmit_power);
        let (w, state) = wmmse(&e, &cfg, &init).unwrap();
        let converged = sum_rate(&e, &w, cfg.noise_power).unwrap();
        let rebuilt = build_parametric_w(&extract_params(&state), &e, cfg.transmit_power).unwrap();
        worst_trip = worst_trip.max((sum_rate(&e, &rebuilt, cfg.noise_power).unwrap() - converged).abs());

        let (_, early) = wmmse(&e, &two, &init).unwrap();
        let p = extract_params(&early);
        let before = sum_rate(&e, &build_parametric_w(&p, &e, cfg.transmit_power).unwrap(), cfg.noise_power).unwrap();
        let refined = refine_params(&p, &e, &cfg, 200).unwrap();
        let after = sum_rate(&e, &build_parametric_w(&refined, &e, cfg.transmit_power).unwrap(), cfg.noise_power).unwrap();
        if after < before {
            decreases += 1;
        }
        if after >= 0.95 * converged {
            close += 1;
        }
    }
    Outcome {
        pass: worst_trip <= 1e-6 && decreases == 0 && close >= 80,
        detail: format!(
            "round-trip deviation {worst_trip:.3e} bits (need ≤ 1e-6), refinement decreased rate {decreases}/100, 2 iterations + refinement ≥ 95% of converged {close}/100 (need ≥ 80)"
        ),
    }
}

fn selection_oracle() -> Outcome {
    let params = ScenarioParams { nc: 4, n1: 3, n2: 2, m: 2, k: 2, ..ScenarioParams::default() };
    let oracle = ZfOracle { transmit_power: 10.0, noise_power: 1.0, subcarriers: 4 };
    let (mut exact, mut greedy_ratio, mut ceo_ratio, mut ceo_sum, mut random_sum) = (0, 0.0, 0.0, 0.0, 0.0);
    let n_inst = 50;
    for t in 0..n_inst as u64 {
        let seed = trial_seed(6060, 0, t);
        let tensor = params.sample_scenario(&mut stream_rng(seed, Stream::Scenario), 2).unwrap().tensor().unwrap();
        let (best, best_rate) = exhaustive_select(&tensor, 2, &oracle, DEFAULT_ENUMERATION_LIMIT).unwrap();

        let mut brute = (Vec::new(), f64::NEG_INFINITY);
        for i in 0..6 {
            for j in i + 1..6 {
                let e = apply_assignment(&tensor, &PositionAssignment::new(vec![i, j], 6).unwrap()).unwrap();
                let r = sum_rate(&e, &zf(&e, 10.0).unwrap().solution, 1.0).unwrap();
                if r > brute.1 {
                    brute = (vec![i, j], r);
                }
            }
        }
        if best.positions() == &brute.0[..] && best_rate == brute.1 {
            exact += 1;
        }

        let g = greedy_select(&tensor, 2, &oracle).unwrap();
        greedy_ratio += oracle.evaluate(&tensor, g.positions()).unwrap() / best_rate;
        let c = ceo_select(&tensor, 2, &oracle, &CeoParams::default(), &mut stream_rng(seed, Stream::Selection)).unwrap();
        ceo_ratio += c.rate / best_rate;
        ceo_sum += c.rate;
        let mut rng = stream_rng(seed ^ 1, Stream::Selection);
        let r = random_select(&mut rng, 6, 2).unwrap();
        random_sum += oracle.evaluate(&tensor, r.positions()).unwrap();
    }
    let n = n_inst as f64;
    let (greedy_ratio, ceo_ratio) = (greedy_ratio / n, ceo_ratio / n);
    Outcome {
        pass: exact == n_inst && greedy_ratio >= 0.95 && ceo_ratio >= 0.95 && ceo_sum >= random_sum,
        detail: format!(
            "exhaustive = brute force {exact}/{n_inst}, greedy {:.2}% and CEO {:.2}% of exhaustive on average (need ≥ 95%), CEO mean {:.4} vs random mean {:.4}",
            100.0 * greedy_ratio,
            100.0 * ceo_ratio,
            ceo_sum / n,
            random_sum / n
        ),
    }
}

fn net_rate_tradeoff() -> Outcome {
    let js = vec![8.0, 16.0, 24.0, 32.0, 48.0, 64.0];
    let reps = 5;
    let mut interior = 0;
    let mut argmaxes = Vec::new();
    for rep in 0..reps {
        let mut cfg = ExperimentConfig::new(ExperimentKind::NetRate, ScenarioParams::default(), SweepAxis::NumPilotPositions, js.clone());
        cfg.trials = 100;
        cfg.base_seed = 7000 + rep;
        cfg.data_snr_db = 10.0;
        cfg.t_total = 200;
        cfg.selectors = vec![SelectorKind::Greedy];
        cfg.beamformers = vec![BeamformerKind::Wmmse];
        let (_, _, records) = run_sweep_to_strings(&cfg, 0).unwrap();
        let means: Vec<f64> = summarize(&records).iter().map(|r| r.net_rate.expect("net rate").0).collect();
        let best = means
            .iter()
            .enumerate()
            .fold(0, |b, (i, &m)| if m > means[b] { i } else { b });
        if best != 0 && best != js.len() - 1 {
            interior += 1;
        }
        argmaxes.push(js[best] as usize);
    }
    let spot = net_rate(10.0, 32, &NetRateConfig { t_total: 200 }).unwrap();
    let needed = (0.8 * reps as f64).ceil() as usize;
    Outcome {
        pass: interior >= needed && spot == 8.4,
        detail: format!(
            "interior maximizer in {interior}/{reps} repetitions (maximizing J {argmaxes:?}, need ≥ 80%), net_rate(10, 32, 200) = {spot}"
        ),
    }
}

fn determinism() -> Outcome {
    let mut rate = ExperimentConfig::new(
        ExperimentKind::Rate,
        ScenarioParams { nc: 8, ..ScenarioParams::default() },
        SweepAxis::DataSnrDb,
        vec![0.0, 10.0, 20.0],
    );
    rate.trials = 3;
    rate.base_seed = 99;
    rate.selectors = vec![SelectorKind::Random, SelectorKind::Ceo];
    rate.beamformers = vec![BeamformerKind::Zf, BeamformerKind::Wmmse, BeamformerKind::ParametricRefined];
    let mut ce = ExperimentConfig::new(ExperimentKind::Ce, ScenarioParams::default(), SweepAxis::PilotSnrDb, vec![0.0, 10.0]);
    ce.trials = 4;
    ce.patterns = PatternKind::ALL.to_vec();
    let mut identical = true;
    for cfg in [&rate, &ce] {
        let (a, sa, _) = run_sweep_to_strings(cfg, 1).unwrap();
        let (b, sb, _) = run_sweep_to_strings(cfg, 4).unwrap();
        let (c, sc, _) = run_sweep_to_strings(cfg, 1).unwrap();
        identical &= a == b && a == c && sa == sb && sa == sc;
    }
    Outcome {
        pass: identical,
        detail: format!("per-trial and summary CSVs byte-identical across reruns and 1 vs 4 workers: {identical}"),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("SOMP exact recovery", somp_exact_recovery),
        ("NMSE monotonicity", nmse_monotonicity),
        ("WMMSE contract", wmmse_contract),
        ("Single-user closed form", single_user_closed_form),
        ("Parametric round trip", parametric_round_trip),
        ("Selection oracle", selection_oracle),
        ("Net-rate trade-off", net_rate_tradeoff),
        ("Determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let out = run();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("[{verdict}] {name}: {} ({:.1}s)", out.detail, start.elapsed().as_secs_f64());
        if !out.pass {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 || std::env::var_os("MASIM_ACCEPTANCE_STRICT").is_none() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
