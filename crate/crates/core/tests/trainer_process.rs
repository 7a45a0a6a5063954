mod common;

use std::net::TcpListener;
use std::time::Duration;

use common::*;
use scotd::builder::{sample_corpus, to_training_examples, SamplingParams, Setting, TaskCatalog, TrainingMode};
use scotd::eval::{evaluate, Decode, DecodeParams};
use scotd::trainer::{CommandTrainer, Trainer, TrainerError};

/// Answers every completion request with the label stored in the checkpoint.
const SERVER: &str = r#"
import json, sys
from http.server import BaseHTTPRequestHandler, HTTPServer
port, ckpt = int(sys.argv[1]), sys.argv[2]
label = open(ckpt + "/label").read().strip()
class H(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        choices = [{"index": i, "text": " Because. So the answer is: (%s)" % label, "finish_reason": "stop"}
                   for i in range(body["n"])]
        out = json.dumps({"choices": choices}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)
    def log_message(self, *a):
        pass
HTTPServer(("127.0.0.1", port), H).serve_forever()
"#;

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn argv(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn trainer(work: &std::path::Path, train: Vec<String>, serve: Vec<String>) -> CommandTrainer {
    CommandTrainer {
        train_command: train,
        serve_command: serve,
        port: free_port(),
        work_dir: work.to_path_buf(),
        model_id: "student".into(),
        ready_timeout: Duration::from_secs(20),
        concurrency: 2,
    }
}

#[test]
fn trains_serves_and_evaluates_a_student() {
    let task = task4();
    let train = instances(&task, 6, 31);
    let teacher = MockTeacher::new(&task, &train, 1.0, 3);
    let mut params = SamplingParams::new("mock-teacher");
    params.n_samples = 2;
    let corpus = sample_corpus(&task, &train, &prompt_set(&task), &params, &teacher).unwrap();
    let examples = to_training_examples(&corpus, &TaskCatalog::single(&task, &train), TrainingMode::Scotd, Setting::Supervised).unwrap();

    let work = tempfile::tempdir().unwrap();
    // the "training" step checks the JSONL and stores a constant label
    let t = trainer(
        work.path(),
        argv(&["sh", "-c", "test $(wc -l < {train}) -eq 12 && mkdir -p {out} && echo b > {out}/label"]),
        argv(&["python3", "-c", SERVER, "{port}", "{checkpoint}"]),
    );
    let student = t.train(&examples, "run/1").unwrap();
    let jsonl = std::fs::read_to_string(work.path().join("run_1/train.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 12);

    let report = evaluate(&task, &train, student.as_ref(), Decode::SelfConsistency, &DecodeParams { n: 3, ..Default::default() }).unwrap();
    let want = train.iter().filter(|i| i.gold_label.as_ref().unwrap().as_str() == "b").count() as f64 / 6.0;
    assert_eq!(report.accuracy, want);
    assert_eq!(report.model_id, "student");

    let port = t.port;
    drop(student);
    std::thread::sleep(Duration::from_millis(200));
    assert!(std::net::TcpStream::connect(("127.0.0.1", port)).is_err(), "server outlived the student");
}

#[test]
fn failing_train_command_reports_stderr() {
    let work = tempfile::tempdir().unwrap();
    let t = trainer(work.path(), argv(&["sh", "-c", "echo out of memory >&2; exit 3"]), argv(&["true"]));
    let ex = scotd::TrainingExample {
        prompt: "Q: x\nA:".into(),
        completion: " y So the answer is: (a)".into(),
        instance_id: "x".into(),
        provenance: vec![],
    };
    match t.train(std::slice::from_ref(&ex), "fail") {
        Err(TrainerError::CommandFailed { stderr, .. }) => assert!(stderr.contains("out of memory")),
        Err(e) => panic!("{e}"),
        Ok(_) => panic!("expected failure"),
    }

    let t = trainer(work.path(), argv(&["true"]), argv(&["sh", "-c", "exit 1"]));
    assert!(matches!(t.train(&[ex], "dead"), Err(TrainerError::CommandFailed { .. })));
}
