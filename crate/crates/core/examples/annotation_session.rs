//! Run the annotation service on a local port, let three simulated raters
//! work through the queue over HTTP, and print the export.
//!
//! cargo run --example annotation_session

use std::sync::Arc;

use caption_critic::annotate::{self, CreateOptions, Store, StoreOptions, TaskKind};
use caption_critic::corpus::CaptionRecord;
use serde_json::{json, Value};

fn main() -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let dir = std::env::temp_dir().join(format!("annotation-session-{}", std::process::id()));
    let store = Store::open(&dir, StoreOptions::default())?;
    let corpus = [CaptionRecord::from_paragraph("c1", "m", "c1.png", "A kite flies. The kite is purple.")];
    let options = CreateOptions {
        required_raters: 3,
        ..CreateOptions::default()
    };
    store.create_tasks(&corpus, TaskKind::SentenceFactuality, &options)?;

    let token = "local-demo";
    let runtime = tokio::runtime::Runtime::new()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
    let base = format!("http://{}", listener.local_addr()?);
    let app = annotate::router(Arc::new(store), token, None);
    runtime.spawn(async move { axum::serve(listener, app).await });

    let client = reqwest::blocking::Client::new();
    for rater in ["ana", "bo", "cy"] {
        loop {
            let resp = client
                .get(format!("{base}/api/tasks/next?rater_id={rater}&kind=sentence"))
                .bearer_auth(token)
                .send()?;
            if resp.status() == 204 {
                break;
            }
            let task: Value = resp.json()?;
            let sentence = task["sentence"].as_str().unwrap_or_default();
            let body = if sentence.contains("purple") {
                json!({"claims_about_image": true, "label": "contradiction", "rationale": format!("{rater}: the kite is green")})
            } else {
                json!({"claims_about_image": true, "label": "entailment"})
            };
            let ack: Value = client
                .post(format!("{base}/api/tasks/{}/submissions", task["task_id"].as_str().unwrap_or_default()))
                .bearer_auth(token)
                .json(&json!({"rater_id": rater, "body": body}))
                .send()?
                .json()?;
            println!("{rater} -> {} ({})", sentence, ack["status"]);
        }
    }
    let export = client.get(format!("{base}/api/export?kind=sentence")).bearer_auth(token).send()?.text()?;
    println!("\n{export}");
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
