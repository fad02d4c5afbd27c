use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use asdplda::analysis::{self, ProbeSet, ZDataset};
use asdplda::benchmark::{build_benchmark, fit_plda, fit_training_cal, raw_scores, ConditionSet, DpldaInit, PldaBackend};
use asdplda::calibration::fit_global;
use asdplda::config::Config;
use asdplda::data::{read_scores, write_embeddings, write_metadata, write_scores, write_trials, EmbeddingFormat};
use asdplda::dplda::{self, DevSet, TrainData};
use asdplda::metrics::evaluate as eval_report;
use asdplda::model_io::{self, load_dplda, load_model, snapshot_file_name, LoadedModel, ModelFile};
use asdplda::synth::oracle_scores;
use asdplda::tbc::{fit_cond_plda, TbcScorer};
use asdplda::{EmbeddingSet, Error, Result, ScoreKind, ScoreSet};

use crate::sets::{self, load_labeled, load_m_vectors, load_trials, load_unlabeled, set_name};
use crate::Common;

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::InvalidData(format!("cannot write {}: {e}", path.display())))
}

fn write_labeled(dir: &Path, name: &str, set: &EmbeddingSet) -> Result<()> {
    let prefix = dir.join(name);
    write_embeddings(set, &sets::with_suffix(&prefix, ".emb"), EmbeddingFormat::Binary)?;
    write_metadata(set.require_meta("output")?, &sets::meta_path(&prefix))
}

fn write_condition_set(dir: &Path, name: &str, cs: &ConditionSet) -> Result<()> {
    write_labeled(dir, name, &cs.set)?;
    let prefix = dir.join(name);
    write_trials(&cs.trials, &sets::trials_path(&prefix))?;
    let oracle = oracle_scores(&cs.set, &cs.trials, &cs.oracles)?;
    let scores = ScoreSet::new(cs.trials.clone(), oracle, ScoreKind::Llr)?;
    write_scores(&scores, &sets::with_suffix(&prefix, ".oracle.tsv"))
}

pub fn generate(cfg: &Config, c: &Common) -> Result<()> {
    let bench = build_benchmark(&cfg.benchmark()?)?;
    write_labeled(&c.out, "train", &bench.train)?;
    for cs in &bench.dev {
        write_condition_set(&c.out, &format!("dev-{}", cs.condition), cs)?;
    }
    for cs in &bench.eval {
        write_condition_set(&c.out, &format!("eval-{}", cs.condition), cs)?;
    }
    write_text(&c.out.join("config.txt"), &cfg.to_string())?;
    println!(
        "wrote train ({} samples) and {} dev + {} eval sets to {}",
        bench.train.len(),
        bench.dev.len(),
        bench.eval.len(),
        c.out.display()
    );
    Ok(())
}

pub fn init(cfg: &Config, c: &Common, train: &Path, cal: &[PathBuf]) -> Result<()> {
    let pi = cfg.prior()?;
    let train_set = load_labeled(train)?;
    let (front, _, scorer) = fit_plda(&train_set, cfg.baseline_lda_dim)?;
    let global = if cal.is_empty() {
        fit_training_cal(&front, &scorer, &train_set, pi, cfg.seed)?
    } else {
        let mut pooled: Option<ScoreSet> = None;
        for p in cal {
            let set = load_unlabeled(p)?;
            let raw = raw_scores(&front, &scorer, &set, &load_trials(p, None)?)?;
            pooled = Some(match pooled {
                None => raw,
                Some(prev) => {
                    let trials = [prev.trials(), raw.trials()].concat();
                    let scores = [prev.scores(), raw.scores()].concat();
                    ScoreSet::new(trials, scores, ScoreKind::Raw)?
                }
            });
        }
        fit_global(&pooled.expect("at least one calibration set"), pi)?
    };
    let backend = PldaBackend { front, scorer, cal: global };
    let path = c.out.join("plda.json");
    model_io::plda_to_file(&backend, pi, cfg.snapshot()).save(&path)?;
    println!("alpha {} beta {}", global.alpha, global.beta);
    println!("wrote {}", path.display());
    Ok(())
}

fn fit_init(cfg: &Config, set: &EmbeddingSet, external: bool) -> Result<DpldaInit> {
    DpldaInit::fit(set, cfg.dims(), cfg.warm_start_options(external)?)
}

pub fn train(cfg: &Config, c: &Common, train: &Path) -> Result<()> {
    let set = load_labeled(train)?;
    let m = load_m_vectors(c.m_vectors.as_deref())?;
    let init = fit_init(cfg, &set, m.is_some())?;
    let tc = cfg.train_config();
    let data = TrainData { set: &set, m_vectors: m.as_ref() };
    let snaps = dplda::train(init.model(cfg.seed)?, data, &tc)?;
    for (epoch, model) in &snaps {
        let path = c.out.join(snapshot_file_name(cfg.seed, *epoch));
        model_io::save_dplda(model, cfg.snapshot(), &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn sweep(cfg: &Config, c: &Common, train: &Path, dev: &[PathBuf]) -> Result<()> {
    let set = load_labeled(train)?;
    let m = load_m_vectors(c.m_vectors.as_deref())?;
    let init = fit_init(cfg, &set, m.is_some())?;
    let names: Vec<String> = dev.iter().map(|p| set_name(p)).collect();
    let dev_sets = dev.iter().map(|p| load_unlabeled(p)).collect::<Result<Vec<_>>>()?;
    let dev_trials = dev.iter().map(|p| load_trials(p, None)).collect::<Result<Vec<_>>>()?;
    let devs: Vec<DevSet> = names
        .iter()
        .zip(&dev_sets)
        .zip(&dev_trials)
        .map(|((name, set), trials)| DevSet { name, set, m_vectors: m.as_ref(), trials })
        .collect();
    let tc = cfg.train_config();
    let data = TrainData { set: &set, m_vectors: m.as_ref() };
    let result = dplda::sweep_and_select(|s| init.model(s), data, &tc, &cfg.seeds, &tc.snapshot_epochs, &devs)?;
    let mut table = String::from("seed\tepoch");
    for n in &names {
        let _ = write!(table, "\t{n}");
    }
    table.push_str("\tmean\n");
    for row in &result.table {
        let _ = write!(table, "{}\t{}", row.seed, row.epoch);
        for v in &row.dev_cllr {
            let _ = write!(table, "\t{v:.6}");
        }
        let _ = writeln!(table, "\t{:.6}", row.mean_cllr);
    }
    write_text(&c.out.join("sweep.tsv"), &table)?;
    print!("{table}");
    let path = c.out.join(snapshot_file_name(result.best_seed, result.best_epoch));
    model_io::save_dplda(&result.best, cfg.snapshot(), &path)?;
    println!("best seed {} epoch {}: wrote {}", result.best_seed, result.best_epoch, path.display());
    Ok(())
}

pub fn score(_cfg: &Config, c: &Common, model: &Path, set: &Path, trials: Option<&Path>) -> Result<()> {
    let loaded = load_model(model)?;
    let data = load_unlabeled(set)?;
    let trials = load_trials(set, trials)?;
    let scores = match &loaded {
        LoadedModel::Plda { backend, .. } => backend.score_trials(&data, &trials)?,
        LoadedModel::Dplda(m) => {
            let mv = load_m_vectors(c.m_vectors.as_deref())?;
            if m.side.is_external() != mv.is_some() {
                return Err(Error::Config(if mv.is_none() {
                    "this model takes external m-vectors; pass --m-vectors".into()
                } else {
                    "this model computes its own m-vectors; drop --m-vectors".into()
                }));
            }
            m.score_trials(&data, mv.as_ref(), &trials)?
        }
    };
    let path = c.out.join(format!("{}.scores.tsv", set_name(set)));
    write_scores(&scores, &path)?;
    println!("wrote {} scores to {}", scores.len(), path.display());
    Ok(())
}

pub fn tbc_score(
    cfg: &Config,
    c: &Common,
    model: &Path,
    pool: &[PathBuf],
    set: &Path,
    trials: Option<&Path>,
) -> Result<()> {
    let file = ModelFile::load(model)?;
    let (backend, _) = model_io::plda_from_file(&file).map_err(|e| Error::Config(format!("tbc-score: {e}")))?;
    let pools = pool.iter().map(|p| load_labeled(p)).collect::<Result<Vec<_>>>()?;
    let pool_set = EmbeddingSet::concat(&pools.iter().collect::<Vec<_>>())?;
    let cond = fit_cond_plda(&pool_set, cfg.tbc_cond_lda_dim)?;
    let tbc = TbcScorer::new(backend.front, backend.scorer, cond, pool_set, cfg.tbc_config(backend.cal)?)?;
    let data = load_unlabeled(set)?;
    let scores = tbc.score_trials(&data, &load_trials(set, trials)?)?;
    let path = c.out.join(format!("{}.tbc.scores.tsv", set_name(set)));
    write_scores(&scores, &path)?;
    println!("wrote {} scores to {}", scores.len(), path.display());
    Ok(())
}

pub fn evaluate(c: &Common, scores: &[PathBuf]) -> Result<()> {
    let mut table = String::from("scores\tn_target\tn_impostor\tactual_cllr\tmin_cllr\teer\n");
    for p in scores {
        let r = eval_report(&read_scores(p, ScoreKind::Llr)?)?;
        let name = p.display();
        let _ = writeln!(
            table,
            "{name}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            r.n_target, r.n_impostor, r.actual_cllr, r.min_cllr, r.eer
        );
    }
    write_text(&c.out.join("evaluate.tsv"), &table)?;
    print!("{table}");
    Ok(())
}

fn load_analysis_inputs(
    c: &Common,
    train: &Path,
    sets: &[PathBuf],
) -> Result<(EmbeddingSet, Vec<(String, EmbeddingSet)>, Option<EmbeddingSet>)> {
    let train_set = load_labeled(train)?;
    let loaded = sets
        .iter()
        .map(|p| Ok((set_name(p), load_unlabeled(p)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((train_set, loaded, load_m_vectors(c.m_vectors.as_deref())?))
}

pub fn analyze_z(cfg: &Config, c: &Common, model: &Path, train: &Path, set: &[PathBuf]) -> Result<()> {
    let model = load_dplda(model)?;
    let (train_set, loaded, m) = load_analysis_inputs(c, train, set)?;
    let datasets: Vec<ZDataset> = loaded
        .iter()
        .map(|(name, s)| ZDataset { name, set: s, m_vectors: m.as_ref() })
        .collect();
    let za = analysis::analyze_z(&model, &train_set, m.as_ref(), &datasets, cfg.analyze_max_points)?;
    write_text(&c.out.join("analyze_z.tsv"), &za.to_tsv())?;
    println!("set_a\tset_b\tseparation");
    for (i, (a, _)) in loaded.iter().enumerate() {
        for (b, _) in &loaded[i + 1..] {
            if let Some(s) = za.separation(a, b) {
                println!("{a}\t{b}\t{s:.4}");
            }
        }
    }
    Ok(())
}

pub fn probe_z(c: &Common, model: &Path, train: &Path, set: &[PathBuf]) -> Result<()> {
    let model = load_dplda(model)?;
    let (train_set, loaded, m) = load_analysis_inputs(c, train, set)?;
    let trials = set.iter().map(|p| load_trials(p, None)).collect::<Result<Vec<_>>>()?;
    let evals: Vec<ProbeSet> = loaded
        .iter()
        .zip(&trials)
        .map(|((name, s), t)| ProbeSet { name, set: s, m_vectors: m.as_ref(), trials: t })
        .collect();
    let rows = analysis::probe_z(&model, &train_set, m.as_ref(), &evals)?;
    let table = analysis::probe_table_tsv(&rows);
    write_text(&c.out.join("probe_z.tsv"), &table)?;
    print!("{table}");
    Ok(())
}
