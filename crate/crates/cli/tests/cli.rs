use std::process::{Command, Output};

fn wf_levy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wf-levy"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8")
}

#[test]
fn pi_rows_follow_the_ratio_recursion() {
    let out = wf_levy(&["pi", "--sigma", "0.8", "--atom", "0.1:0.8", "--K", "16"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,pi,ratio"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 16);
    assert_eq!(rows[0][2], 1.0);
    // r(2) = (sigma + lambda) / 2 with lambda = 0.8
    assert!((rows[1][2] - 0.8).abs() < 1e-9);
    for row in &rows {
        assert!((row[1] / rows[0][1] - row[2]).abs() <= 1e-7 * row[2].max(1e-30));
    }
}

#[test]
fn invalid_atoms_are_usage_errors() {
    for atom in ["1.5:1", "0:1", "0.2:-1", "0.2", "x:1"] {
        let out = wf_levy(&["pi", "--atom", atom]);
        assert_eq!(out.status.code(), Some(2), "atom {atom}");
    }
}

#[test]
fn too_small_cutoff_is_reported() {
    let out = wf_levy(&["pi", "--sigma", "3", "--atom", "0.5:3", "--K", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--K"));
}

#[test]
fn coeffs_dump_for_pure_drift() {
    let out = wf_levy(&["coeffs", "--sigma", "0.5", "--K", "24", "--J", "12"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert_eq!(text.lines().next(), Some("# params: sigma=0.5 atoms=none"));
    let section = |name: &str| -> Vec<(usize, f64)> {
        text.lines()
            .skip_while(|l| !l.starts_with(&format!("# section {name}:")))
            .skip(1)
            .take_while(|l| !l.starts_with('#'))
            .map(|l| {
                let mut it = l.split_whitespace();
                (it.next().unwrap().parse().unwrap(), it.next().unwrap().parse().unwrap())
            })
            .collect()
    };
    // without jumps b_j = b_1 s^(j-1) / j! with b_1 = s / (e^s - 1)
    let s: f64 = 0.5;
    let b1 = s / s.exp_m1();
    let mut fact = 1.0;
    for (j, v) in section("b_ode").into_iter().take(6) {
        fact *= j as f64;
        let expected = b1 * s.powi(j as i32 - 1) / fact;
        assert!((v - expected).abs() < 1e-7, "b_{j}: {v} vs {expected}");
    }
    assert!(!section("b_normalized").is_empty());
    assert!(text.contains("# section a: k j value"));
    assert!(text.contains("# residual a_relation_max"));
}

#[test]
fn fixation_curve_endpoints() {
    let out = wf_levy(&["fixation", "--sigma", "0.5", "--K", "24", "--points", "11"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[0][..2], [0.0, 0.0]);
    assert!((rows[10][0] - 1.0).abs() < 1e-12);
    assert!((rows[10][1] - 1.0).abs() < 1e-6);
    let s: f64 = 0.5;
    let mid = (s * 0.5).exp_m1() / s.exp_m1();
    assert!((rows[5][1] - mid).abs() < 1e-6);
}

#[test]
fn simulations_are_reproducible_from_the_seed() {
    let sde = ["simulate", "--sigma", "0.8", "--atom", "0.1:0.8", "--samples", "300", "--T", "20", "--seed", "7"];
    let a = wf_levy(&sde);
    let b = wf_levy(&sde);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let easg = [
        "simulate", "--mode", "easg", "--sigma", "0.8", "--atom", "0.1:0.8", "--samples", "2000", "--T", "0.3",
        "--m", "2", "--seed", "7",
    ];
    let a = wf_levy(&easg);
    let b = wf_levy(&easg);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("# section Q: j,mc,se,ode"));
    let c = wf_levy(&[
        "simulate", "--mode", "easg", "--sigma", "0.8", "--samples", "2000", "--T", "0.3", "--m", "2", "--seed", "8",
    ]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn easg_arguments_are_checked() {
    let out = wf_levy(&["simulate", "--mode", "easg", "--m", "2", "--i", "3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_subset_passes() {
    let out = wf_levy(&["validate", "--quick", "--only", "2,3"]);
    let text = stdout(&out);
    assert!(out.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);
    let out = wf_levy(&["validate", "--only", "14"]);
    assert_eq!(out.status.code(), Some(2));
}
