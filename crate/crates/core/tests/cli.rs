use hermite_pi::nn::fixed::{Op, QuantizedModel};
use hermite_pi::nn::io::{load_model, save_model, GoldenVector};
use hermite_pi::nn::{forward_float, zoo};
use hermite_pi::tensor::Tensor;
use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hermite-pi"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn deal_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("mlp3.json");
    assert!(run(&["zoo", "mlp3", "--out", s(&model)]).status.success());
    let mut files = Vec::new();
    for (tag, seed) in [("a", "beef"), ("b", "beef"), ("c", "0xbeee")] {
        let (c, sv) = (dir.path().join(format!("{tag}.c")), dir.path().join(format!("{tag}.s")));
        let out = run(&["deal", "--model", s(&model), "--out-client", s(&c), "--out-server", s(&sv), "--seed", seed]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("0 unguarded truncations"));
        files.push((fs::read(c).unwrap(), fs::read(sv).unwrap()));
    }
    assert_eq!(files[0], files[1]);
    assert_ne!(files[0], files[2]);
}

#[test]
fn relu_model_is_refused_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("relu.json");
    assert!(run(&["zoo", "mlp3-relu", "--out", s(&model)]).status.success());
    let c = dir.path().join("c");
    let out = run(&["deal", "--model", s(&model), "--out-client", s(&c), "--out-server", s(&c), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not protocol-executable"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["verify", "--suite", "wire"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["--modulus", "100", "verify", "--suite", "field"]).status.code(), Some(2));
}

#[test]
fn verify_field_and_hermite_pass() {
    for suite in ["field", "hermite"] {
        let out = run(&["verify", "--suite", suite]);
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(out.status.success(), "{text}");
        assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
    }
}

#[test]
fn estimate_cost_reports_ratios() {
    let out = run(&["estimate-cost", "--arch", "resnet32"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success());
    assert!(text.contains("31 activation layers"), "{text}");
    assert!(text.contains("online comm 32.89x, online time 16.85x"), "{text}");
    assert_eq!(run(&["estimate-cost", "--arch", "alexnet"]).status.code(), Some(1));
}

#[test]
fn herpnize_rewrites_a_resnet_unit() {
    let dir = tempfile::tempdir().unwrap();
    let (src, dst) = (dir.path().join("unit.json"), dir.path().join("unit-herpn.json"));
    save_model(&zoo::resnet_unit(2, 4, 0), &src, None).unwrap();
    assert_eq!(run(&["herpnize", "--model", s(&src), "--out", s(&dst)]).status.code(), Some(1));
    let out = run(&["herpnize", "--model", s(&src), "--out", s(&dst), "--surgery", "--calibrate", "16"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = load_model(&dst).unwrap();
    assert_eq!((m.count("HerPN"), m.count("ReLU"), m.count("BatchNorm")), (3, 0, 0));
}

#[test]
fn client_and_server_processes_match_the_golden_vector() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    assert!(run(&["zoo", "mlp3", "--out", s(&p("m.json"))]).status.success());
    let out = run(&[
        "deal", "--model", s(&p("m.json")), "--out-client", s(&p("c.bin")), "--out-server", s(&p("s.bin")),
        "--seed", "7", "--out-public", s(&p("public.json")),
    ]);
    assert!(out.status.success());
    let public: QuantizedModel = serde_json::from_str(&fs::read_to_string(p("public.json")).unwrap()).unwrap();
    for op in &public.program {
        match op {
            Op::Dense { weight, bias, .. } => assert!(weight.is_empty() && bias.is_empty()),
            Op::Activation { c0, .. } => assert!(c0.is_empty()),
            _ => {}
        }
    }

    let model = load_model(&p("m.json")).unwrap();
    let input = Tensor::new(vec![2], vec![1.25, -2.5]).unwrap();
    let golden = GoldenVector {
        expected: forward_float(&model, &input).unwrap(),
        input,
        tolerance: 0.01,
    };
    golden.save(&p("golden.json")).unwrap();

    let addr = format!("127.0.0.1:{}", free_port());
    let server = bin()
        .args(["infer", "--role", "server", "--addr", &addr, "--model", s(&p("m.json"))])
        .args(["--material", s(&p("s.bin")), "--metrics", s(&p("server.jsonl"))])
        .spawn()
        .unwrap();
    let client = run(&[
        "infer", "--role", "client", "--addr", &addr, "--model", s(&p("public.json")), "--material", s(&p("c.bin")),
        "--input", s(&p("golden.json")), "--metrics", s(&p("client.jsonl")), "--output", s(&p("y.json")),
    ]);
    let server = server.wait_with_output().unwrap();
    assert!(client.status.success(), "{}", String::from_utf8_lossy(&client.stderr));
    assert!(server.status.success(), "{}", String::from_utf8_lossy(&server.stderr));

    let y: Tensor = serde_json::from_str(&fs::read_to_string(p("y.json")).unwrap()).unwrap();
    assert!(y.max_abs_diff(&golden.expected) <= golden.tolerance);
    for f in ["client.jsonl", "server.jsonl"] {
        let text = fs::read_to_string(p(f)).unwrap();
        assert!(text.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
        assert!(text.contains("activation"));
    }
}
