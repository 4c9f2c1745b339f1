//! The five subcommands: stats, ingest, train, evaluate, predict.

use std::path::PathBuf;

use stabr_core::baselines::{PopModel, RnnHyper, RnnParams, SscfIndex};
use stabr_core::checkpoint::{write_atomic, Checkpoint, SavedModel};
use stabr_core::data::{
    build_vocabs, compute_stats, make_examples_all, parse_logs, parse_tag_file, sessionize,
    split_sessions, Session, SongKey, SongVocab, TagTable,
};
use stabr_core::eval::{evaluate, EvalReport, EvalSession, Recommender};
use stabr_core::model::{ModelHyper, ModelKind, ModelParams};
use stabr_core::optim::{train, TrainConfig};
use stabr_core::{Error, Result};

use crate::config::{ModelChoice, RunConfig};
use crate::dataset::{load_dataset, write_dataset, Dataset};

/// Parse, sessionize and print corpus statistics without writing
/// anything.
pub fn cmd_stats(cfg: &RunConfig) -> Result<()> {
    let logs = parse_logs(cfg.require_logs()?)?;
    if logs.skipped > 0 {
        println!("skipped {} malformed log lines", logs.skipped);
    }
    let sessions = sessionize(&logs.interactions, cfg.gap_seconds);
    let tag_entries = parse_tag_file(cfg.require_tags()?)?;
    println!("{}", compute_stats(&logs.interactions, &sessions, &tag_entries));
    Ok(())
}

/// Full ingestion: sessionize, split, build vocabularies and write every
/// dataset artifact.
pub fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let logs_path = cfg.require_logs()?;
    let tags_path = cfg.require_tags()?;
    let dir = cfg.require_dataset_dir()?;

    let logs = parse_logs(logs_path)?;
    if logs.skipped > 0 {
        println!("skipped {} malformed log lines", logs.skipped);
    }
    let sessions = sessionize(&logs.interactions, cfg.gap_seconds);
    let tag_entries = parse_tag_file(tags_path)?;
    let stats = compute_stats(&logs.interactions, &sessions, &tag_entries);

    let (train_sessions, test_sessions) = split_sessions(sessions);
    let (song_vocab, tag_vocab, tag_table) = build_vocabs(&train_sessions, tags_path)?;

    let ds = Dataset {
        train: train_sessions,
        test: test_sessions,
        song_vocab,
        tag_vocab,
        tag_table,
    };
    write_dataset(dir, &ds, &stats.to_string())?;

    println!("{stats}");
    println!(
        "wrote {} train and {} test sessions to {}",
        ds.train.len(),
        ds.test.len(),
        dir.display()
    );
    Ok(())
}

fn loss_trace_path(checkpoint: &std::path::Path) -> PathBuf {
    PathBuf::from(format!("{}.loss.tsv", checkpoint.display()))
}

/// Train the selected neural model on the ingested dataset and write a
/// versioned checkpoint plus the per-epoch loss trace.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.require_dataset_dir()?;
    let ckpt_path = cfg.require_checkpoint()?;
    let choice = cfg.model.unwrap_or(ModelChoice::Stabr);
    if !choice.is_neural() {
        return Err(Error::argument(format!(
            "model '{choice}' has no trainable parameters; run evaluate directly"
        )));
    }

    let ds = load_dataset(dir)?;
    let examples = make_examples_all(&ds.train, cfg.history, &ds.song_vocab, &ds.tag_table);
    if examples.is_empty() {
        return Err(Error::argument("the training split yields no examples".to_string()));
    }
    println!("training {choice} on {} examples", examples.len());

    let train_cfg = TrainConfig {
        batch_size: cfg.batch_size,
        learning_rate: cfg.effective_learning_rate(choice),
        epochs: cfg.epochs,
        seed: cfg.seed,
        history: cfg.history,
        clip_norm: cfg.clip_norm,
    };

    let (model, trace) = match choice {
        ModelChoice::Sabr | ModelChoice::Stabr => {
            let hyper = ModelHyper {
                song_vocab: ds.song_vocab.len(),
                tag_vocab: ds.tag_vocab.len(),
                song_dim: cfg.song_dim,
                tag_dim: cfg.tag_dim,
                song_hidden: cfg.song_hidden,
                tag_hidden: cfg.tag_hidden,
                bottleneck: cfg.bottleneck,
                dropout: cfg.dropout,
                history: cfg.history,
            };
            let kind = if choice == ModelChoice::Sabr { ModelKind::Sabr } else { ModelKind::Stabr };
            let params = ModelParams::new(kind, hyper, cfg.seed);
            let (params, trace) = train(params, &examples, &train_cfg)?;
            (SavedModel::Attentive(params), trace)
        }
        ModelChoice::Rnn => {
            let hyper = RnnHyper {
                vocab: ds.song_vocab.len(),
                dim: cfg.song_dim,
                hidden: cfg.rnn_hidden,
                history: cfg.history,
            };
            let params = RnnParams::new(hyper, cfg.seed);
            let (params, trace) = train(params, &examples, &train_cfg)?;
            (SavedModel::Rnn(params), trace)
        }
        _ => unreachable!("non-neural models rejected above"),
    };

    let ck = Checkpoint { model, song_vocab: ds.song_vocab, tag_vocab: ds.tag_vocab };
    ck.save(ckpt_path)?;

    let mut tsv = String::from("epoch\tmean_loss\n");
    for (epoch, loss) in trace.iter().enumerate() {
        tsv.push_str(&format!("{}\t{}\n", epoch + 1, loss));
    }
    write_atomic(&loss_trace_path(ckpt_path), tsv.as_bytes())?;

    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        println!("epoch 1 mean loss {first}");
        println!("epoch {} mean loss {last}", trace.len());
    }
    println!("checkpoint written to {}", ckpt_path.display());
    Ok(())
}

fn indexed_train_sessions(ds: &Dataset) -> Vec<Vec<usize>> {
    ds.train
        .iter()
        .map(|s| s.items.iter().filter_map(|it| ds.song_vocab.lookup(&it.key)).collect())
        .collect()
}

fn eval_sessions(test: &[Session], vocab: &SongVocab) -> Vec<EvalSession> {
    test.iter().map(|s| EvalSession::from_session(s, vocab)).collect()
}

fn run_eval<R: Recommender>(
    rec: &R,
    sessions: &[EvalSession],
    tags: &TagTable,
    cfg: &RunConfig,
) -> Result<EvalReport> {
    evaluate(rec, sessions, tags, &cfg.ks)
}

fn vocabs_match(ck: &Checkpoint, ds: &Dataset) -> Result<()> {
    if ck.song_vocab.keys() != ds.song_vocab.keys() || ck.tag_vocab.names() != ds.tag_vocab.names()
    {
        return Err(Error::checkpoint(
            "checkpoint vocabularies do not match the dataset; was it trained elsewhere?"
                .to_string(),
        ));
    }
    Ok(())
}

/// Evaluate the configured model over the test sessions and write the
/// report as text and key=value files.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.require_dataset_dir()?;
    let report_path = cfg.require_report()?;
    let ds = load_dataset(dir)?;
    let sessions = eval_sessions(&ds.test, &ds.song_vocab);

    let report = match cfg.model {
        Some(ModelChoice::Pop) => {
            let pop = PopModel::fit(&indexed_train_sessions(&ds), ds.song_vocab.len());
            run_eval(&pop, &sessions, &ds.tag_table, cfg)?
        }
        Some(ModelChoice::Sscf) => {
            let index = SscfIndex::build(
                &indexed_train_sessions(&ds),
                ds.song_vocab.len(),
                cfg.sscf_neighbors,
            );
            run_eval(&index, &sessions, &ds.tag_table, cfg)?
        }
        choice => {
            let ck = Checkpoint::load(cfg.require_checkpoint()?)?;
            if let Some(wanted) = choice {
                if ck.model.name() != wanted.name() {
                    return Err(Error::checkpoint(format!(
                        "checkpoint holds a {} model but '{}' was requested",
                        ck.model.name(),
                        wanted
                    )));
                }
            }
            vocabs_match(&ck, &ds)?;
            match &ck.model {
                SavedModel::Attentive(p) => run_eval(p, &sessions, &ds.tag_table, cfg)?,
                SavedModel::Rnn(p) => run_eval(p, &sessions, &ds.tag_table, cfg)?,
            }
        }
    };

    write_atomic(
        &PathBuf::from(format!("{}.txt", report_path.display())),
        report.to_text().as_bytes(),
    )?;
    write_atomic(
        &PathBuf::from(format!("{}.kv", report_path.display())),
        report.to_kv().as_bytes(),
    )?;
    print!("{}", report.to_text());
    Ok(())
}

/// Rank the k most likely next songs for an ad-hoc prefix of
/// `artist::track` keys.
pub fn cmd_predict(cfg: &RunConfig, songs: &[String], k: usize) -> Result<()> {
    let ck = Checkpoint::load(cfg.require_checkpoint()?)?;

    let mut keys = Vec::new();
    for raw in songs {
        let Some((artist, track)) = raw.split_once("::") else {
            return Err(Error::argument(format!(
                "song '{raw}' is not in the form artist::track"
            )));
        };
        keys.push(SongKey::new(artist, track));
    }
    if keys.is_empty() {
        return Err(Error::argument("no songs given; pass --song 'artist::track'".to_string()));
    }

    let mut prefix = Vec::new();
    let mut unknown = Vec::new();
    for key in &keys {
        match ck.song_vocab.lookup(key) {
            Some(idx) => prefix.push(idx),
            None => unknown.push(key.to_string()),
        }
    }
    for key in &unknown {
        println!("unknown song skipped: {key}");
    }
    if prefix.is_empty() {
        return Err(Error::argument(format!(
            "no given song is in the vocabulary: {}",
            unknown.join("; ")
        )));
    }

    let (top, log_probs) = match &ck.model {
        SavedModel::Attentive(p) => {
            let prefix_tags: Vec<Vec<usize>> = match p.kind() {
                ModelKind::Stabr => {
                    // tag lists live in the dataset artifacts
                    let ds = load_dataset(cfg.require_dataset_dir()?)?;
                    vocabs_match(&ck, &ds)?;
                    prefix.iter().map(|&s| ds.tag_table.tags_of(s).to_vec()).collect()
                }
                ModelKind::Sabr => vec![Vec::new(); prefix.len()],
            };
            (p.predict_topk(&prefix, &prefix_tags, k)?, p.eval_log_probs(&prefix, &prefix_tags)?)
        }
        SavedModel::Rnn(p) => {
            let top = p.predict_topk(&prefix, k)?;
            let (lp, _) = p.forward(&prefix)?;
            (top, lp)
        }
    };

    for (rank, &song) in top.iter().enumerate() {
        let key = ck.song_vocab.key(song).expect("index from ranking");
        println!("{:>3}. {}  p={:.6}", rank + 1, key, log_probs[song].exp());
    }
    Ok(())
}
