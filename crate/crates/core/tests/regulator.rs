use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::{Duration, Instant};

use diffplan::regulator::{DirectiveProvider, HttpProvider, ProviderError, SceneSummary, StyleRegulator};
use diffplan::scene::SceneContext;
use diffplan::scorer::ScorerWeights;
use diffplan::traj::EgoStatus;

/// Serves `n` connections; `reply` maps the request body to a raw response,
/// or `None` to hold the connection open without answering.
fn serve(n: usize, reply: fn(&str) -> Option<String>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/directive", listener.local_addr().unwrap());
    thread::spawn(move || {
        for stream in listener.incoming().take(n) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            match reply(&String::from_utf8(body).unwrap()) {
                Some(r) => stream.write_all(r.as_bytes()).unwrap(),
                None => thread::sleep(Duration::from_secs(2)),
            }
        }
    });
    url
}

fn ok_json(body: &str) -> String {
    format!(
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
}

fn summary() -> SceneSummary<f64> {
    SceneSummary::new(&SceneContext::straight_road(50.0, 8.0), &EgoStatus::new([0.0, 0.0], 0.0, 8.0, 0.0), &ScorerWeights::default())
}

#[test]
fn http_directive_is_applied() {
    let url = serve(1, |req| {
        let v: serde_json::Value = serde_json::from_str(req).unwrap();
        assert!(v["prompt"].as_str().unwrap().contains("w_coll"));
        assert_eq!(v["prompt_template_id"], "style-regulator-v1");
        Some(ok_json(r#"{"style":"conservative","deltas":{"w_coll":1.0},"rationale":"test"}"#))
    });
    let mut reg = StyleRegulator::new(Box::new(HttpProvider::new(url, Duration::from_secs(2))), ScorerWeights::default());
    let rec = reg.tick(5.0, &SceneContext::straight_road(50.0, 8.0), &EgoStatus::new([0.0, 0.0], 0.0, 8.0, 0.0)).unwrap().clone();
    assert!(rec.applied);
    assert_eq!(reg.weights().w_coll, 6.0);
}

#[test]
fn silent_provider_times_out_and_keeps_weights() {
    let url = serve(1, |_| None);
    let provider = HttpProvider::new(url.clone(), Duration::from_millis(200));
    let start = Instant::now();
    let err = DirectiveProvider::<f64>::request(&provider, &summary()).unwrap_err();
    assert!(matches!(err, ProviderError::Timeout), "{err:?}");
    assert!(start.elapsed() < Duration::from_secs(2));

    let url = serve(1, |_| None);
    let mut reg = StyleRegulator::new(Box::new(HttpProvider::new(url, Duration::from_millis(200))), ScorerWeights::default());
    reg.tick(5.0, &SceneContext::straight_road(5.0, 8.0), &EgoStatus::new([0.0, 0.0], 0.0, 8.0, 0.0));
    assert_eq!(reg.query_count(), 1);
    assert_eq!(reg.weights(), ScorerWeights::default());
}

#[test]
fn malformed_reply_keeps_weights() {
    let url = serve(1, |_| Some(ok_json("not json")));
    let provider = HttpProvider::new(url, Duration::from_secs(2));
    let err = DirectiveProvider::<f64>::request(&provider, &summary()).unwrap_err();
    assert!(matches!(err, ProviderError::InvalidResponse(_)), "{err:?}");
}

#[test]
fn unreachable_provider_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let provider = HttpProvider::new(format!("http://127.0.0.1:{port}/"), Duration::from_millis(500));
    let err = DirectiveProvider::<f64>::request(&provider, &summary()).unwrap_err();
    assert!(matches!(err, ProviderError::Transport(_) | ProviderError::Timeout), "{err:?}");
}
