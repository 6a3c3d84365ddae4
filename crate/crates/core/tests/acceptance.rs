//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so
//! the verdicts are always printed.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anil_lab::experiment::{
    evaluate, expected_second_order_per_iter, parse_config, replay, run_experiment, ExitStatus, ExperimentConfig,
};
use anil_lab::inner_loop::{contraction_check, InnerLoopConfig};
use anil_lab::optimizer::{anil_run, maml_run, MetaMethod, OuterConfig, TaskSource};
use anil_lab::params::SplitParameters;
use anil_lab::probes::ProbeBlock;
use anil_lab::task_model::{sample_eval_pool, QuadraticLoss, TaskFamilySpec, TaskInstance};

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn gradcheck() -> Verdict {
    let cfg = config("gradcheck.json");
    let start = Instant::now();
    let out = evaluate(&cfg).expect("gradcheck runs");
    let elapsed = start.elapsed();
    let g = cfg.gradcheck.as_ref().expect("gradcheck section");
    let rows = out.results_csv.lines().count() - 1;
    let pass = out.status == ExitStatus::Pass
        && g.num_tasks >= 100
        && g.n_values == [0, 1, 2, 5, 10]
        && cfg.additional_families.len() == 1
        && rows == 10
        && elapsed <= Duration::from_secs(60);
    verdict(
        pass,
        format!("{rows} (geometry, N) cells, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn contraction() -> Verdict {
    let cfg = config("contraction.json");
    let out = evaluate(&cfg).expect("contraction runs");
    let violations = out.results_csv.lines().skip(1).filter(|l| l.ends_with(",true")).count();
    let c = cfg.contraction.as_ref().expect("contraction section");

    let loss = QuadraticLoss::scalar(1.0, 0.0, 0.0, 0.0, 0.0);
    let task = TaskInstance::new(0, loss.clone(), loss).unwrap();
    let p1 = SplitParameters::from_slices(&[1.3], &[0.0]).unwrap();
    let p2 = SplitParameters::from_slices(&[-0.4], &[0.0]).unwrap();
    let report = contraction_check(&task, &p1, &p2, &InnerLoopConfig::new(0.5, 10).unwrap(), 1.0, 1.0).unwrap();
    let worst_gap = report
        .steps
        .iter()
        .map(|s| (s.measured - s.bound).abs())
        .fold(0.0f64, f64::max);
    let pass = violations == 0 && c.num_tasks >= 100 && c.num_steps >= 10 && worst_gap <= 1e-12;
    verdict(
        pass,
        format!(
            "{violations} violations over {} tasks, scalar equality gap {worst_gap:.1e}",
            c.num_tasks
        ),
    )
}

fn smoothness() -> Verdict {
    let start = Instant::now();
    let sc = config("smoothness_sc.json");
    let sc_out = evaluate(&sc).expect("strongly convex probe runs");
    let nc = config("smoothness_nc.json");
    let nc_out = evaluate(&nc).expect("nonconvex probe runs");
    let elapsed = start.elapsed();

    // Every strongly convex estimate must sit under its bound.
    let sc_bounds_ok = sc_out.results_csv.lines().skip(1).all(|l| l.ends_with(",true"));
    let ratio = |csv: &str, block: ProbeBlock| {
        let series: Vec<(usize, f64)> = csv
            .lines()
            .skip(1)
            .filter_map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[0] == block.name()).then(|| (f[1].parse().unwrap(), f[2].parse().unwrap()))
            })
            .collect();
        let at = |n| series.iter().find(|(k, _)| *k == n).map(|(_, v)| *v).unwrap();
        at(10) / at(1)
    };
    let nc_min = ProbeBlock::ALL
        .iter()
        .map(|&b| ratio(&nc_out.results_csv, b))
        .fold(f64::INFINITY, f64::min);
    let pass = sc_out.status == ExitStatus::Pass
        && sc_bounds_ok
        && nc_out.status == ExitStatus::Pass
        && nc_min >= 3.0
        && elapsed <= Duration::from_secs(300);
    verdict(
        pass,
        format!(
            "strongly convex trends+bounds {}, nonconvex min N=10/N=1 ratio {nc_min:.2}, {:.1}s",
            sc_bounds_ok && sc_out.status == ExitStatus::Pass,
            elapsed.as_secs_f64()
        ),
    )
}

fn sweep_summary(out: &anil_lab::ExperimentOutcome) -> String {
    out.sweep
        .as_ref()
        .map(|pts| {
            pts.iter()
                .map(|p| format!("N={}:{}", p.n_steps, p.iterations()))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .unwrap_or_default()
}

fn strongly_convex_sweep() -> Verdict {
    let cfg = config("sweep_sc.json");
    let ratio = cfg.family.smoothness_l / cfg.family.mu;
    let out = evaluate(&cfg).expect("sweep runs");
    let pass = out.status == ExitStatus::Pass && (2.0..=4.0).contains(&ratio) && cfg.n_sweep == [1, 3, 5, 7, 10];
    verdict(pass, format!("iterations to epsilon {}", sweep_summary(&out)))
}

fn nonconvex_sweep() -> Verdict {
    let cfg = config("sweep_nc.json");
    let out = evaluate(&cfg).expect("sweep runs");
    let demo = config("divergence_nc.json");
    let demo_out = evaluate(&demo).expect("divergence demo runs");
    let largest = demo.n_sweep.iter().copied().max().unwrap_or_default();
    let pass = out.status == ExitStatus::Pass
        && cfg.n_sweep == [1, 2, 5, 10]
        && demo_out.status == ExitStatus::Pass
        && largest >= 30;
    verdict(
        pass,
        format!("sweep {}; demo {}", sweep_summary(&out), sweep_summary(&demo_out)),
    )
}

fn op_counts() -> Verdict {
    let spec = TaskFamilySpec::strongly_convex(1.0, 2.0, 4, 10, 9);
    let pool = sample_eval_pool(&spec, 4).unwrap();
    let mut outer = OuterConfig::manual(0.01, 0.01, 2, 1, InnerLoopConfig::new(0.25, 3).unwrap());
    outer.seed = 9;
    let init = SplitParameters::zeros(4, 10);
    let anil = anil_run(TaskSource::Family(&spec), &outer, &init, &pool).unwrap();
    let maml = maml_run(TaskSource::Family(&spec), &outer, &init, &pool).unwrap();
    let a = anil.rows[0].ops.second_order_entries();
    let m = maml.rows[0].ops.second_order_entries();
    let pass = a == 336
        && m == 1176
        && a == expected_second_order_per_iter(MetaMethod::Anil, 2, 3, 4, 10)
        && m == expected_second_order_per_iter(MetaMethod::Maml, 2, 3, 4, 10);
    verdict(pass, format!("ANIL {a}, MAML {m} second-order entries per iteration"))
}

fn anil_equals_maml() -> Verdict {
    let spec = TaskFamilySpec::strongly_convex(1.0, 3.0, 5, 0, 21);
    let pool = sample_eval_pool(&spec, 16).unwrap();
    let mut outer = OuterConfig::manual(0.05, 0.05, 4, 50, InnerLoopConfig::new(0.1, 3).unwrap());
    outer.seed = 21;
    let init = SplitParameters::from_slices(&[1.0, -0.5, 0.25, 2.0, 0.0], &[]).unwrap();
    let mut anil_traj = Vec::new();
    let mut maml_traj = Vec::new();
    for k in 1..=50 {
        outer.max_outer_iters = k;
        anil_traj.push(
            anil_run(TaskSource::Family(&spec), &outer, &init, &pool)
                .unwrap()
                .final_params,
        );
        maml_traj.push(
            maml_run(TaskSource::Family(&spec), &outer, &init, &pool)
                .unwrap()
                .final_params,
        );
    }
    let identical = anil_traj.iter().zip(&maml_traj).all(|(a, m)| {
        a.w.iter().zip(m.w.iter()).all(|(x, y)| x.to_bits() == y.to_bits()) && a.phi.len() == m.phi.len()
    });
    let moved = anil_traj.last().map(|p| p.distance(&init)).unwrap_or_default();
    verdict(
        identical && moved > 0.0,
        format!("50 iterates compared bitwise, distance travelled {moved:.3e}"),
    )
}

fn replay_identical() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let mut checked = Vec::new();
    let mut all = true;
    for name in ["gradcheck.json", "sweep_nc.json", "compare_maml.json"] {
        let mut cfg = config(name);
        let first: PathBuf = tmp.path().join(name).join("first");
        cfg.output_dir = first.clone();
        run_experiment(&cfg).expect("experiment runs");
        let report = replay(&first.join("manifest.json"), &tmp.path().join(name).join("second")).expect("replay runs");
        all &= report.identical();
        checked.push(format!(
            "{name}:{}",
            if report.identical() { "identical" } else { "differs" }
        ));
    }
    verdict(all, checked.join(" "))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 8] = [
        ("meta-gradient matches finite differences", gradcheck),
        ("inner-loop contraction bound", contraction),
        ("smoothness scaling in N", smoothness),
        ("strongly convex sweep trends", strongly_convex_sweep),
        ("nonconvex sweep and divergence demo", nonconvex_sweep),
        ("second-order entry accounting", op_counts),
        ("ANIL equals MAML without shared block", anil_equals_maml),
        ("manifest replay is byte-identical", replay_identical),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = f();
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} [{}] {name}: {} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
