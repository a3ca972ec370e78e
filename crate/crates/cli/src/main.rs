mod args;

use std::time::Duration;

use anyhow::{Context, Result};
use clap::Parser;
use mvcont_client::Client;
use mvcont_core::api::{EvalRequest, JobResult, JobStatus, ReportRequest, SweepRequest};
use mvcont_core::harness::MetricsRecord;
use mvcont_server::{serve, AppState, ServerConfig};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use args::{absolute, Cli, Command};

const POLL: Duration = Duration::from_millis(500);

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();

    if let Command::Serve(serve_args) = &cli.command {
        let listener = TcpListener::bind(&serve_args.bind)
            .await
            .with_context(|| format!("binding {}", serve_args.bind))?;
        eprintln!("serving on http://{}", listener.local_addr()?);
        let state = AppState::new(ServerConfig {
            max_jobs: serve_args.max_jobs,
            ..ServerConfig::default()
        });
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve(listener, state, shutdown).await?;
        return Ok(());
    }

    let (client, local) = match &cli.server {
        Some(url) => (Client::new(url.clone()), None),
        None => {
            let listener = TcpListener::bind("127.0.0.1:0").await?;
            let url = format!("http://{}", listener.local_addr()?);
            let (tx, rx) = oneshot::channel::<()>();
            let handle = tokio::spawn(serve(listener, AppState::new(ServerConfig::default()), async {
                let _ = rx.await;
            }));
            (Client::new(url), Some((tx, handle)))
        }
    };

    let outcome = dispatch(&cli, &client).await;
    if let Some((tx, handle)) = local {
        let _ = tx.send(());
        let _ = handle.await;
    }
    outcome
}

async fn dispatch(cli: &Cli, client: &Client) -> Result<()> {
    match &cli.command {
        Command::Run(a) => {
            let accepted = client.submit_run(&a.config.request()?).await?;
            eprintln!("job {} (config {})", accepted.id, &accepted.config_hash[..16]);
            let status = wait(client, &accepted.id).await?;
            print_result(cli.json, &status)
        }
        Command::Sweep(a) => {
            let request = SweepRequest {
                base: a.config.request()?,
                grid: a.grid()?,
            };
            let accepted = client.submit_sweep(&request).await?;
            eprintln!("job {} (base config {})", accepted.id, &accepted.config_hash[..16]);
            let status = wait(client, &accepted.id).await?;
            print_result(cli.json, &status)
        }
        Command::Eval(a) => {
            let request = EvalRequest {
                config: a.config.request()?,
                encoder: absolute(&a.encoder),
                memory: absolute(&a.memory),
            };
            let accepted = client.submit_eval(&request).await?;
            let status = wait(client, &accepted.id).await?;
            print_result(cli.json, &status)
        }
        Command::Report(a) => {
            let response = client
                .report(&ReportRequest {
                    metrics: absolute(&a.metrics),
                    style: a.style.into(),
                })
                .await?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&response)?);
            } else {
                print!("{}", response.markdown);
                eprintln!("{} records", response.records);
            }
            Ok(())
        }
        Command::Serve(_) => unreachable!("handled before connecting"),
    }
}

async fn wait(client: &Client, id: &str) -> Result<JobStatus> {
    let mut reported = 0;
    let status = client
        .wait(id, POLL, |s| {
            if s.progress.steps >= reported + 100 {
                reported = s.progress.steps;
                eprintln!(
                    "  step {} seed {} loss {:.4}",
                    s.progress.steps,
                    s.progress.seed.unwrap_or_default(),
                    s.progress.last_loss.unwrap_or(f64::NAN)
                );
            }
        })
        .await?;
    Ok(status)
}

fn summary(r: &MetricsRecord) -> String {
    let [p, q, m, c, s] = r.tuple;
    match (r.mean_final_aa, r.std_final_aa) {
        (Some(mean), Some(sd)) => format!(
            "({p},{q},{m},{c},{s}) |B_m|={} M={}: final AA {mean:.2} ± {sd:.2} over {} seeds [{}]",
            r.config.mem_batch_size,
            r.config.memory_size,
            r.per_seed.len(),
            &r.config_hash[..16]
        ),
        _ => format!("({p},{q},{m},{c},{s}): no completed seeds [{}]", &r.config_hash[..16]),
    }
}

fn print_result(json: bool, status: &JobStatus) -> Result<()> {
    let result = status.result.as_ref().context("job finished without a result")?;
    if json {
        println!("{}", serde_json::to_string_pretty(result)?);
        return Ok(());
    }
    match result {
        JobResult::Run(record) => {
            println!("{}", summary(record));
            println!("records: {}", record.config.out.display());
        }
        JobResult::Sweep(outcome) => {
            for cell in &outcome.cells {
                match (&cell.record, &cell.error) {
                    (Some(r), _) => println!("{}", summary(r)),
                    (None, Some(e)) => println!("{:?} failed: {e}", cell.tuple),
                    (None, None) => println!("{:?}: no result", cell.tuple),
                }
            }
            if let Some(table) = &outcome.table {
                println!("table: {}", table.display());
            }
        }
        JobResult::Eval(eval) => {
            println!(
                "final AA {:.2} using {} memory examples [{}]",
                eval.final_average_accuracy,
                eval.num_memory_examples_used,
                &eval.config_hash[..eval.config_hash.len().min(16)]
            );
            if !eval.missing_classes.is_empty() {
                println!("classes absent from memory: {:?}", eval.missing_classes);
            }
        }
    }
    Ok(())
}
