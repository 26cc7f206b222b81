use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_polybranch"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn polybranch")
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn column(csv: &str) -> Vec<f64> {
    csv.lines().skip(1).map(|l| l.parse().unwrap()).collect()
}

#[test]
fn pure_walk_respects_speed_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let o = run(&[
        "simulate", "--model", "brw", "--kappa", "0", "--nu", "0", "--qx", "10", "--replicas", "400",
        "--seed", "1", "--max-steps", "20000", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let samples = column(&read(&out.join("samples_q10.csv")));
    assert!(samples.len() >= 10);
    assert!(samples.iter().all(|&t| t >= 9.0));
    let summary: Value = serde_json::from_str(&read(&out.join("summary_q10.json"))).unwrap();
    assert_eq!(summary["n_hits"].as_u64().unwrap() as usize, samples.len());
    assert!(summary["units"]["length"].is_string());
}

#[test]
fn too_few_hits_exit_3() {
    // a transient walk reaches a unit ball 10 away in fewer than 10 of 100 tries
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate", "--model", "brw", "--kappa", "0", "--nu", "0", "--qx", "10", "--replicas", "100",
        "--seed", "1", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("degenerate"));
}

#[test]
fn flag_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    for args in [
        vec!["simulate", "--model", "brw", "--kappa", "0.8", "--nu", "0.5", "--qx", "10", "--out", d],
        vec!["simulate", "--model", "bcrw", "--kappa", "0.1", "--qx", "10", "--out", d],
        vec!["simulate", "--model", "brw", "--kappa", "0.1", "--beta", "0.4", "--qx", "10", "--out", d],
        vec!["simulate", "--model", "walk", "--kappa", "0.1", "--qx", "10", "--out", d],
        vec!["simulate", "--model", "brw", "--kappa", "0.1", "--qx", "-3", "--out", d],
        vec!["simulate", "--model", "brw", "--kappa", "0.1", "--qx", "10"],
        vec!["theory", "--model", "bcrw", "--kappa", "0.1", "--beta", "0.4"],
        vec!["theory", "--model", "brw", "--kappa", "0.1", "--d", "2"],
        vec!["network-sp", "--network", "/nonexistent", "--out", d],
    ] {
        assert_eq!(code(&run(&args)), 2, "{args:?}");
    }
}

#[test]
fn simulate_is_deterministic_across_threads_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let common = [
        "simulate", "--model", "bcrw", "--kappa", "0.2", "--nu", "0.004", "--beta", "0.4", "--qx", "15,25",
        "--replicas", "120", "--seed", "9", "--out",
    ];
    for (threads, out) in [("1", &a), ("3", &b)] {
        let mut args = vec!["--threads", threads];
        args.extend(common);
        args.push(out.to_str().unwrap());
        assert!(run(&args).status.success());
    }
    let o = run(&["replay", a.join("manifest.json").to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: Value = serde_json::from_str(&read(&a.join("manifest.json"))).unwrap();
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(outputs.len(), 7);
    for name in outputs {
        assert_eq!(read(&a.join(name)), read(&b.join(name)), "{name}");
        assert_eq!(read(&a.join(name)), read(&c.join(name)), "{name}");
    }
    assert!(!manifest["argv"].as_array().unwrap().iter().any(|v| v == "--threads"));

    // a different seed changes the samples
    let d = dir.path().join("d");
    let mut args: Vec<&str> = common.to_vec();
    args[12] = "10";
    args.push(d.to_str().unwrap());
    assert!(run(&args).status.success());
    assert_ne!(read(&a.join("samples_q15.csv")), read(&d.join("samples_q15.csv")));
}

#[test]
fn scaled_gbrw_mean_matches_theory_command() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate", "--model", "gbrw", "--kappa", "0.0856", "--nu", "0.004", "--sigma-scale", "msid",
        "--qx", "65.5", "--replicas", "1000", "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let summary: Value = serde_json::from_str(&read(&dir.path().join("summary_q65.5.json"))).unwrap();
    let sim = summary["mean"].as_f64().unwrap();
    let th = ok_json(&[
        "theory", "--model", "gbrw", "--kappa", "0.0856", "--nu", "0.004", "--sigma-scale", "msid", "--qx", "65.5",
    ]);
    let pred = th["curve"][0]["mean_fpt"].as_f64().unwrap();
    assert!(((sim - pred) / pred).abs() < 0.05, "sim {sim} theory {pred}");
}

#[test]
fn theory_outputs() {
    let t = ok_json(&["theory", "--model", "brw", "--kappa", "0", "--nu", "0"]);
    assert_eq!(t["rho"].as_f64(), Some(1.0));
    assert!(t["c1"].is_null());
    assert!(t["notice"].as_str().unwrap().contains("supercritical"));

    let t = ok_json(&["theory", "--model", "bbm", "--kappa", "0.1", "--nu", "0.004"]);
    let k = t["implied_kappa"].as_f64().unwrap();
    assert!((0.163..=0.167).contains(&k), "{k}");
    let s1 = t["c1"].as_f64().unwrap();
    assert!((s1 - (2.0 * k).sqrt()).abs() < 1e-12);

    let t = ok_json(&["theory", "--model", "gbrw", "--kappa", "0.0856", "--nu", "0.004"]);
    assert!((t["c1"].as_f64().unwrap() - 0.52030).abs() < 1e-4);
    assert!(t["c2"].as_f64().unwrap() > 0.0);
    let p = t["extinction_probability"].as_f64().unwrap();
    assert!(p > 0.0 && p < 1.0);
    assert!(t["lambda_c"]["eight_chain_exact"].as_f64().unwrap() > 1.0);
    assert_eq!(t["curve"].as_array().unwrap().len(), 9);

    let t = ok_json(&["theory", "--model", "bbm", "--kappa", "0.2", "--bbm-rate", "direct", "--jump-scale", "2"]);
    assert!((t["c1"].as_f64().unwrap() - 2.0 * 0.4f64.sqrt()).abs() < 1e-12);
}

fn write_distances(path: &Path, rate: f64, n: usize) {
    // exponential quantiles at evenly spaced probabilities
    let mut s = String::from("distance\n");
    for i in 0..n {
        let u = (i as f64 + 0.5) / n as f64;
        let _ = writeln!(s, "{}", -(1.0 - u).ln() / rate);
    }
    std::fs::write(path, s).unwrap();
}

fn write_chains(path: &Path, chains: &[Vec<[f64; 3]>]) {
    let mut s = String::from("chain_id,bead_index,x,y,z\n");
    for (c, beads) in chains.iter().enumerate() {
        for (i, p) in beads.iter().enumerate() {
            let _ = writeln!(s, "{c},{i},{},{},{}", p[0], p[1], p[2]);
        }
    }
    std::fs::write(path, s).unwrap();
}

#[test]
fn estimate_branch_rate_and_msid() {
    let dir = tempfile::tempdir().unwrap();
    let dist = dir.path().join("d.csv");
    write_distances(&dist, 0.0398, 2000);
    let t = ok_json(&["estimate", "--distances", dist.to_str().unwrap()]);
    let k = t["branch_rate"]["kappa"].as_f64().unwrap();
    assert!((k - 0.0398).abs() / 0.0398 < 0.05, "{k}");

    let straight = dir.path().join("s.csv");
    write_chains(&straight, &[(0..50).map(|i| [i as f64, 0.0, 0.0]).collect()]);
    let t = ok_json(&["estimate", "--chains", straight.to_str().unwrap(), "--msid-max", "20"]);
    for row in t["msid"].as_array().unwrap() {
        let n = row["n"].as_f64().unwrap();
        assert!((row["msid"].as_f64().unwrap() - n).abs() < 1e-9);
    }

    let out = dir.path().join("est");
    let t = ok_json(&[
        "estimate", "--chains", straight.to_str().unwrap(), "--msid-max", "5", "--kappa", "0.25", "--out",
        out.to_str().unwrap(),
    ]);
    // sqrt(MSID(4)) of a straight chain
    assert!((t["scaled_jump"]["sigma_s"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert!(out.join("manifest.json").exists());

    let o = run(&["estimate"]);
    assert_eq!(code(&o), 2);
    let flat = dir.path().join("flat.csv");
    std::fs::write(&flat, "distance\n".to_string() + &"5\n".repeat(200)).unwrap();
    assert_eq!(code(&run(&["estimate", "--distances", flat.to_str().unwrap()])), 3);
}

#[test]
fn estimate_correlated_chain_asymptote() {
    let dir = tempfile::tempdir().unwrap();
    let chain = polybranch::estimators::correlated_chain(0.4, 1_000_000, 3);
    let beads: Vec<[f64; 3]> = chain.iter().map(|v| [v[0], v[1], v[2]]).collect();
    let path = dir.path().join("c.csv");
    write_chains(&path, &[beads]);
    let t = ok_json(&["estimate", "--chains", path.to_str().unwrap(), "--msid-max", "100"]);
    let cinf = t["c_inf_estimate"].as_f64().unwrap();
    assert!((cinf - 1.83).abs() < 0.05, "{cinf}");
}

fn lattice(n: usize) -> String {
    let mut s = format!("#box {n} {n} {n} 1 1 1\n#nodes\nid,x,y,z\n");
    let id = |x: usize, y: usize, z: usize| (x * n + y) * n + z;
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                let _ = writeln!(s, "{},{x},{y},{z}", id(x, y, z));
            }
        }
    }
    s.push_str("#edges\ni,j,weight\n");
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                let a = id(x, y, z);
                for b in [id((x + 1) % n, y, z), id(x, (y + 1) % n, z), id(x, y, (z + 1) % n)] {
                    let _ = writeln!(s, "{a},{b},1");
                }
            }
        }
    }
    s
}

#[test]
fn network_sp_on_periodic_lattice() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("lattice.net");
    std::fs::write(&net, lattice(6)).unwrap();
    let out = dir.path().join("sp");
    let o = run(&["network-sp", "--network", net.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // defaults 1.5, 3, 4.5, 6: nearest nodes 1 or 2, 3, 4 or 5, and the periodic self-image
    let means = read(&out.join("means.csv"));
    let rows: Vec<Vec<f64>> = means.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[1][1], 3.0);
    assert_eq!(rows[3][1], 6.0);
    assert_eq!(rows[3][2], 0.0);
    let summary: Value = serde_json::from_str(&read(&out.join("summary_q6.json"))).unwrap();
    assert_eq!(summary["n_periodic_image"], summary["n_sources"]);
    assert_eq!(summary["n_sources"].as_u64(), Some(216));
    assert!(out.join("hist_q3.csv").exists());
    assert!(out.join("manifest.json").exists());

    let o = run(&[
        "network-sp", "--network", net.to_str().unwrap(), "--qx", "2", "--sources", "0,7", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_eq!(column(&read(&out.join("samples_q2.csv"))), vec![2.0, 2.0]);
}

#[test]
fn fit_lines_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let line = dir.path().join("line.csv");
    std::fs::write(&line, "q_x,mean\n10,23\n20,43\n30,63\n40,83\n").unwrap();
    let t = ok_json(&["fit", "--input", line.to_str().unwrap(), "--form", "linear"]);
    assert!((t["r_squared"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((t["c1bar"].as_f64().unwrap() - 0.5).abs() < 1e-12);

    // mean FPT curve of a BRW: A q + B log q + C
    let (a, b, c) = (1.0 / 0.52, 7.3, 0.4);
    let mut s = String::from("q_x,mean,std,n\n");
    for q in [20.0, 30.0, 40.0, 50.0, 60.0f64] {
        let _ = writeln!(s, "{q},{},2.0,1000", a * q + b * q.ln() + c);
    }
    let curve = dir.path().join("curve.csv");
    std::fs::write(&curve, s).unwrap();
    for weighted in [false, true] {
        let mut args = vec!["fit", "--input", curve.to_str().unwrap(), "--form", "loglinear"];
        if weighted {
            args.push("--weighted");
        }
        let t = ok_json(&args);
        let co = &t["coefficients"];
        assert!((co["A"].as_f64().unwrap() - a).abs() < 1e-8);
        assert!((co["B"].as_f64().unwrap() - b).abs() < 1e-8);
        assert!((co["C"].as_f64().unwrap() - c).abs() < 1e-8);
        assert!((t["c1"].as_f64().unwrap() - 0.52).abs() < 1e-8);
    }

    let same = dir.path().join("same.csv");
    std::fs::write(&same, "q_x,mean\n10,1\n10,2\n10,3\n").unwrap();
    assert_eq!(code(&run(&["fit", "--input", same.to_str().unwrap(), "--form", "linear"])), 3);
    assert_eq!(code(&run(&["fit", "--input", line.to_str().unwrap(), "--form", "linear", "--weighted"])), 2);
}

#[test]
fn compare_single_point() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "compare", "--model", "brw", "--kappa-grid", "0.2", "--nu", "0.004", "--replicas", "100", "--qx-points", "3",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&dir.path().join("compare.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "kappa,c1_sim,c1_theory,rel_error");
    assert_eq!(lines.len(), 2);
    let v: Vec<f64> = lines[1].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(v[0], 0.2);
    assert!(v[3].abs() < 0.2, "{v:?}");
    assert_eq!(read(&dir.path().join("compare_points.csv")).lines().count(), 4);
}

#[test]
fn theory_replay_reproduces_output() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok_json(&["theory", "--model", "gbrw", "--kappa", "0.3", "--nu", "0.01", "--out", a.to_str().unwrap()]);
    let o = run(&["replay", a.join("manifest.json").to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(read(&a.join("theory.json")), read(&b.join("theory.json")));
    assert_eq!(code(&run(&["replay", dir.path().join("none.json").to_str().unwrap()])), 2);
}
