use std::path::Path;

use odlt::colmap::{build_problems, parse_model};
use odlt::evaluation::{generate_scene, run_monte_carlo, RunOptions, SyntheticScenario};
use odlt::geometry::rotation_angle_deg;
use odlt::io::{format_problem, parse_problem, Problem};
use odlt::solvers::solve;
use odlt::{Method, SolverConfig};

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn consistent_colmap_model_is_recovered_by_every_method() {
    let model = parse_model(fixture("colmap_consistent")).unwrap();
    let problems = build_problems(&model, 6);
    assert_eq!(problems.problems.len(), 3);
    for p in &problems.problems {
        for method in Method::ALL {
            let r = solve(&p.correspondences, &p.intrinsics, &SolverConfig::with_method(method)).unwrap();
            assert!(
                rotation_angle_deg(r.pose.rotation(), p.truth.rotation()) < 1e-6,
                "{method}"
            );
            assert!((r.pose.center() - p.truth.center()).norm() < 1e-8, "{method}");
        }
    }
}

#[test]
fn problem_file_round_trip_preserves_the_solution() {
    let sc = SyntheticScenario::uncentered(25, 1.0, 1, 3);
    let (cs, _) = generate_scene(&sc, 0);
    let problem = Problem {
        intrinsics: sc.intrinsics,
        correspondences: cs,
    };
    let reparsed = parse_problem(&format_problem(&problem)).unwrap();
    let cfg = SolverConfig::default();
    let a = solve(&problem.correspondences, &problem.intrinsics, &cfg).unwrap();
    let b = solve(&reparsed.correspondences, &reparsed.intrinsics, &cfg).unwrap();
    assert_eq!(a.pose, b.pose);
}

#[test]
fn weighted_solver_beats_normalized_on_uncentered_scenes() {
    let sc = SyntheticScenario::uncentered(50, 1.0, 200, 41);
    let opts = RunOptions {
        timing: false,
        ..RunOptions::default()
    };
    let cfgs = [
        SolverConfig::with_method(Method::Ndlt),
        SolverConfig::with_method(Method::Odlt),
    ];
    let rows = run_monte_carlo(&sc, &cfgs, &opts).unwrap();
    assert_eq!(rows[0].failures + rows[1].failures, 0);
    assert!(rows[1].rot_rmse_deg < 0.85 * rows[0].rot_rmse_deg, "{rows:?}");
}

#[test]
fn translation_resolve_keeps_rotation_and_moves_center() {
    let sc = SyntheticScenario::centered(40, 2.0, 1, 8);
    let (cs, truth) = generate_scene(&sc, 0);
    let cfg = SolverConfig {
        sigma_u: 2.0,
        ..SolverConfig::default()
    };
    let base = solve(
        &cs,
        &sc.intrinsics,
        &SolverConfig {
            method: Method::Odlt,
            ..cfg.clone()
        },
    )
    .unwrap();
    let lost = solve(&cs, &sc.intrinsics, &cfg).unwrap();
    assert_eq!(base.pose.rotation(), lost.pose.rotation());
    assert_ne!(base.pose.center(), lost.pose.center());
    assert!((lost.pose.center() - truth.center()).norm() < 0.5);
}
