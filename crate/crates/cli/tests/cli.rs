use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tensorcalc"))
        .args(args)
        .env_remove("TENSORCALC_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const MATFAC: &str = "var T : ij (6,6)\nvar U : ik (6,2)\nvar V : jk (6,2)\nsum(elem_square(T - U * V'))";

#[test]
fn gradient_of_inner_product_is_twice_x() {
    let o = run(&["diff", "--inline", "var x : i (3)\neinsum(i,i->;x,x)", "--wrt", "x", "--emit", "text"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("d_y_d_x = x + x") || text.contains("2.0"), "{text}");
}

#[test]
fn compressed_hessian_json_has_a_k_by_k_core() {
    let o = run(&["diff", "--inline", MATFAC, "--wrt", "U", "--order", "2", "--compress", "--emit", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let block = &doc["compression"];
    assert!(block.is_object());
    let core = block["core_id"].as_u64().unwrap();
    let node = doc["nodes"].as_array().unwrap().iter().find(|n| n["id"].as_u64() == Some(core)).unwrap();
    let dims: Vec<&str> = node["index_set"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap().split(':').nth(1).unwrap())
        .collect();
    assert_eq!(dims, vec!["2", "2"]);
}

#[test]
fn usage_and_parse_errors_exit_two() {
    let o = run(&["diff", "--inline", "var x : i (3)\nx"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["diff", "--inline", "var x : i (3)\nx +", "--wrt", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("syntax error"));
    assert_eq!(run(&["show", "--inline", ""]).status.code(), Some(2));
    assert_eq!(run(&["bench", "--problem", "logreg", "--n", "0"]).status.code(), Some(2));
    assert_eq!(run(&["bench", "--problem", "svm"]).status.code(), Some(2));
}

#[test]
fn check_passes_and_negative_control_fails() {
    let o = run(&["check", "--problem", "logreg", "--n", "4", "--tol", "1e-5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = run(&["check", "--problem", "nn", "--layers", "3", "--width", "4", "--tol", "1e-4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = run(&["check", "--problem", "logreg", "--n", "4", "--perturb", "1e-3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn check_reads_expression_data() {
    let dir = std::env::temp_dir().join(format!("tensorcalc-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let data = dir.join("env.json");
    std::fs::write(&data, r#"{"A": {"dims": [2, 2], "data": [2, 1, 1, 2]}, "x": {"dims": [2], "data": [0.5, -1]}}"#).unwrap();
    let src = "var A : ij (2,2)\nvar x : i (2)\nx' * A * x".to_string();
    let o = run(&["check", "--inline", &src, "--wrt", "x", "--order", "2", "--data", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = run(&["eval", "--inline", &src, "--data", data.to_str().unwrap()]);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    // 0.25*2 + 2*0.5*(-1)*1 + 1*2 = 1.5
    assert_eq!(doc["y"]["data"][0].as_f64(), Some(1.5));
}

#[test]
fn bench_output_is_deterministic() {
    let args = ["bench", "--problem", "matfac", "--n", "12", "--k", "3", "--modes", "reverse,cross", "--deterministic"];
    let a = stdout(&run(&args));
    let b = stdout(&run(&args));
    assert_eq!(a, b);
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], "problem,n,k,mode,build_ms,eval_flops,eval_ms,compressed,solve_ms");
    assert!(lines.iter().any(|l| l.starts_with("matfac,12,3,cross,0.000,") && l.contains(",true,")));
}

#[test]
fn seed_variable_overrides_flag() {
    let base = ["eval", "--inline", "var x : i (2)\nx"];
    let with_env = |s: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_tensorcalc")).args(base).env("TENSORCALC_SEED", s).output().unwrap();
        stdout(&o)
    };
    let flag = stdout(&run(&[base[0], base[1], base[2], "--seed", "7"]));
    assert_eq!(with_env("7"), flag);
    assert_ne!(with_env("8"), flag);
}

#[test]
fn show_marks_fourth_order_nodes() {
    let full = stdout(&run(&["show", "--inline", MATFAC, "--wrt", "U", "--order", "2", "--mode", "reverse"]));
    assert!(full.contains("fillcolor=red"));
    let comp = stdout(&run(&["show", "--inline", MATFAC, "--wrt", "U", "--order", "2", "--compress"]));
    assert!(comp.starts_with("digraph"));
    assert!(!comp.contains("fillcolor=red"), "{comp}");
}

#[test]
fn simplify_and_json_input_round_trip() {
    let o = run(&["simplify", "--inline", "var x : i (2)\nx + 0 * x", "--emit", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let dir = std::env::temp_dir().join(format!("tensorcalc-cli-json-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("dag.json");
    std::fs::write(&path, stdout(&o)).unwrap();
    let text = stdout(&run(&["simplify", "--expr", path.to_str().unwrap()]));
    assert_eq!(text, "var x : i (2)\ny = x\n");
}
