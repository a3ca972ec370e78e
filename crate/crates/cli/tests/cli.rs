//! Drives the `mvcont` binary.

use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

fn mvcont() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mvcont"));
    cmd.env_remove("MVCONT_SERVER").env_remove("MVCONT_DATA_ROOT");
    cmd
}

fn run(args: &[&str], data_root: Option<&Path>) -> Output {
    let mut cmd = mvcont();
    if let Some(root) = data_root {
        cmd.env("MVCONT_DATA_ROOT", root);
    }
    cmd.args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

/// Ten classes, `per_class` records per file, in the 1 + 3072 byte layout.
fn write_cifar10(dir: &Path, per_class: usize) {
    std::fs::create_dir_all(dir).unwrap();
    let record = |class: u8, k: usize| {
        let mut r = vec![class];
        r.extend((0..3072).map(|p| (class as usize * 25 + (p * 7 + k * 13) % 17) as u8));
        r
    };
    let files: Vec<String> = (1..=5).map(|i| format!("data_batch_{i}.bin")).chain(["test_batch.bin".into()]).collect();
    for (f, name) in files.iter().enumerate() {
        let bytes: Vec<u8> = (0..10u8).flat_map(|c| (0..per_class).flat_map(move |k| record(c, f * 100 + k))).collect();
        std::fs::write(dir.join(name), bytes).unwrap();
    }
}

const SMALL: [&str; 7] = ["--desk-scale", "--memory-size", "8", "--mem-batch-size", "4", "--seeds", "0"];

#[test]
fn help_lists_subcommands_and_flags() {
    let out = run(&["--help"], None);
    assert!(out.status.success());
    let help = text(&out.stdout);
    for sub in ["run", "sweep", "eval", "report", "serve"] {
        assert!(help.contains(sub), "{help}");
    }
    let run_help = text(&run(&["run", "--help"], None).stdout);
    for flag in [
        "--dataset", "--data-path", "--tasks", "--memory-size", "--mem-batch-size", "--mem-iters", "--views",
        "--daa", "--temperature", "--lr", "--seeds", "--desk-scale", "--style-model", "--style-fallback", "--out",
    ] {
        assert!(run_help.contains(flag), "missing {flag}");
    }
}

#[test]
fn invalid_config_exits_nonzero() {
    let out = run(&["run", "--data-path", "/x", "--mem-iters", "0"], None);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("mem_iters"), "{}", text(&out.stderr));
}

#[test]
fn run_eval_and_report_in_process() {
    let tmp = tempfile::tempdir().unwrap();
    write_cifar10(&tmp.path().join("cifar-10-batches-bin"), 1);
    let out_dir = tmp.path().join("runs");
    let out_arg = out_dir.to_str().unwrap();

    let mut args = vec!["--json", "run", "--out", out_arg];
    args.extend(SMALL);
    let out = run(&args, Some(tmp.path()));
    assert!(out.status.success(), "{}", text(&out.stderr));
    let result: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(result["kind"], "run");
    let seed = &result["value"]["per_seed"][0];

    let mut args = vec![
        "eval", "--out", out_arg, "--encoder", seed["encoder_checkpoint"].as_str().unwrap(), "--memory",
        seed["memory_checkpoint"].as_str().unwrap(),
    ];
    args.extend(SMALL);
    let out = run(&args, Some(tmp.path()));
    assert!(out.status.success(), "{}", text(&out.stderr));
    let accuracy = seed["evaluation"]["final_average_accuracy"].as_f64().unwrap();
    assert!(text(&out.stdout).contains(&format!("final AA {accuracy:.2}")), "{}", text(&out.stdout));

    let out = run(&["report", "--metrics", out_arg], None);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("| cifar10 | 8 | 4 | 1 | 1 | 0,0,0 | 1 |"), "{}", text(&out.stdout));
}

#[test]
fn sweep_prints_one_line_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    write_cifar10(&tmp.path().join("cifar-10-batches-bin"), 1);
    let out_arg = tmp.path().join("sweep");
    let mut args = vec!["sweep", "--out", out_arg.to_str().unwrap(), "--sweep-mem-batch-size", "2,4"];
    args.extend(SMALL);
    let out = run(&args, Some(tmp.path()));
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.contains("final AA")).count(), 2, "{stdout}");
    assert!(stdout.contains("|B_m|=2") && stdout.contains("|B_m|=4"));
    assert!(stdout.contains("table: "));
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_then_use_remote_server() {
    let tmp = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let bind = format!("127.0.0.1:{port}");
    let _server = Server(
        mvcont()
            .env("MVCONT_DATA_ROOT", tmp.path())
            .args(["serve", "--bind", &bind])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let url = format!("http://{bind}");
    let mut up = false;
    for _ in 0..100 {
        if std::net::TcpStream::connect(&bind).is_ok() {
            up = true;
            break;
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    assert!(up, "server did not start");

    let out = run(&["--server", &url, "report", "--metrics", tmp.path().to_str().unwrap()], None);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("0 records"));

    // The data root comes from the server's environment, not the client's.
    let out = run(&["--server", &url, "run", "--mem-iters", "0"], None);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("400"), "{}", text(&out.stderr));
}
