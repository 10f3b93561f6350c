//! Terminal adaptive test, in-process or against a running service.

use std::io::{self, BufRead, Write};

use raschcat_client::Client;
use raschcat_core::api::{ApiSession, PosteriorView};
use raschcat_core::session::BankSource;
use raschcat_core::{
    CatError, Item, ItemBank, PriorSpec, Response, SessionConfig, SessionState, ThetaBounds,
};

use crate::{Failure, Outcome, SessionArgs};

/// Difficulties -6, -5.95, ..., 6, each used at most once.
pub fn default_bank() -> ItemBank {
    let mut bank = ItemBank::dense(-6.0, 6.0, 0.05).expect("static bank");
    bank.consume_on_use = true;
    bank
}

enum Input {
    Answer(Response),
    Eof,
}

/// Prompts until a 0/1 answer or end of input.
fn read_answer(input: &mut impl BufRead, out: &mut impl Write) -> io::Result<Input> {
    loop {
        write!(out, "answer (0 = incorrect, 1 = correct): ")?;
        out.flush()?;
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            writeln!(out)?;
            return Ok(Input::Eof);
        }
        match line.trim() {
            "1" => return Ok(Input::Answer(Response::Correct)),
            "0" => return Ok(Input::Answer(Response::Incorrect)),
            "" => continue,
            other => writeln!(out, "please type 0 or 1, not {other:?}")?,
        }
    }
}

fn summary_line(trial: usize, item: &Item, answer: Response, post: &PosteriorView) -> String {
    let mode = post
        .mode
        .map(|m| format!(", mode {m:.4}"))
        .unwrap_or_default();
    format!(
        "trial {trial}: {} (b = {:+.3}) answered {answer}; posterior mean {:.4}, median {:.4}, sd {:.4}{mode}",
        item.id,
        item.difficulty,
        post.mean,
        post.median,
        post.variance.sqrt()
    )
}

fn io_failure(e: io::Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn local_config(args: &SessionArgs) -> Result<SessionConfig, Failure> {
    let bounds = ThetaBounds::default();
    let prior = match args.prior.as_str() {
        "uniform" => PriorSpec::uniform(bounds),
        _ => PriorSpec::truncated_normal(args.prior_mean, args.prior_sd, bounds),
    };
    let bank = match &args.bank {
        Some(path) => BankSource::Path(path.clone()),
        None => BankSource::Inline(default_bank()),
    };
    Ok(SessionConfig {
        prior,
        rule: args.rule,
        bank: Some(bank),
        max_trials: args.max_trials,
        estimator: args.estimator,
        ..serde_json::from_str("{}").expect("defaults deserialize")
    })
}

pub fn run(args: &SessionArgs) -> Outcome {
    let stdin = io::stdin();
    let mut input = stdin.lock();
    let mut out = io::stdout().lock();
    match &args.server {
        Some(url) => run_remote(args, url, &mut input, &mut out),
        None => run_local(args, &mut input, &mut out),
    }
}

fn save(state: &SessionState, args: &SessionArgs, out: &mut impl Write) -> Outcome {
    std::fs::write(&args.save, state.save()).map_err(io_failure)?;
    writeln!(out, "session saved to {}", args.save.display()).map_err(io_failure)
}

fn run_local(args: &SessionArgs, input: &mut impl BufRead, out: &mut impl Write) -> Outcome {
    let mut state = match &args.resume {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| Failure::Usage(format!("{path}: {e}")))?;
            SessionState::load(&bytes)?
        }
        None => SessionState::start(local_config(args)?)?,
    };
    let max = state.config().max_trials;
    while let Some(item) = state.current_item().cloned() {
        writeln!(
            out,
            "item {} of {max}: {}, difficulty {:+.3}",
            state.trials_used() + 1,
            item.id,
            item.difficulty
        )
        .map_err(io_failure)?;
        let answer = match read_answer(input, out).map_err(io_failure)? {
            Input::Answer(a) => a,
            Input::Eof => {
                save(&state, args, out)?;
                writeln!(out, "resume with --resume {}", args.save.display())
                    .map_err(io_failure)?;
                return Ok(());
            }
        };
        state.submit(&item.id, answer)?;
        if !state.is_finished() {
            match state.next_item() {
                Ok(_) | Err(CatError::Exhausted) => {}
                Err(e) => return Err(e.into()),
            }
        }
        let view = raschcat_core::api::PosteriorView::from_state(&state);
        writeln!(
            out,
            "{}",
            summary_line(state.trials_used(), &item, answer, &view)
        )
        .map_err(io_failure)?;
    }
    print_final(&ApiSession::from_state(&state), out)?;
    save(&state, args, out)
}

fn print_final(session: &ApiSession, out: &mut impl Write) -> Outcome {
    if session.exhausted {
        writeln!(out, "item bank exhausted").map_err(io_failure)?;
    }
    if let Some(est) = &session.estimate {
        writeln!(
            out,
            "final estimate: {:.4} ({}, {} trials, posterior variance {:.4})",
            est.value,
            est.estimator.name(),
            est.trials_used,
            est.posterior_variance
        )
        .map_err(io_failure)?;
    }
    Ok(())
}

fn run_remote(
    args: &SessionArgs,
    url: &str,
    input: &mut impl BufRead,
    out: &mut impl Write,
) -> Outcome {
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(io_failure)?;
    let client = Client::new(url);
    let remote = |e: raschcat_client::ClientError| Failure::Check(e.to_string());
    runtime.block_on(async {
        let mut session = match &args.resume {
            Some(id) => client.session(id).await.map_err(remote)?,
            None => {
                let mut cfg = local_config(args)?;
                // The server cannot read our files; send the items instead.
                cfg.bank = match &args.bank {
                    Some(path) => Some(BankSource::Inline(ItemBank::load(
                        path,
                        ThetaBounds::default(),
                        true,
                    )?)),
                    None => None,
                };
                client.create_session(&cfg).await.map_err(remote)?
            }
        };
        while let Some(item) = session.current_item.clone() {
            writeln!(
                out,
                "item {} of {}: {}, difficulty {:+.3}",
                session.trials_used + 1,
                session.max_trials,
                item.id,
                item.difficulty
            )
            .map_err(io_failure)?;
            let answer = match read_answer(input, out).map_err(io_failure)? {
                Input::Answer(a) => a,
                Input::Eof => {
                    writeln!(
                        out,
                        "session {} kept on the server; resume with --server {url} --resume {}",
                        session.session_id, session.session_id
                    )
                    .map_err(io_failure)?;
                    return Ok(());
                }
            };
            session = client
                .answer(&session.session_id, &item.id, answer)
                .await
                .map_err(remote)?;
            let post = client
                .posterior(&session.session_id)
                .await
                .map_err(remote)?;
            let shown = Item::new(item.id.clone(), item.difficulty);
            writeln!(
                out,
                "{}",
                summary_line(session.trials_used, &shown, answer, &post)
            )
            .map_err(io_failure)?;
        }
        print_final(&session, out)
    })
}
