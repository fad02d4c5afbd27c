//! Runs the synthetic benchmark and prints Cllr / min-Cllr / EER per system
//! and condition.

use std::time::Instant;

use asdplda::benchmark::{build_benchmark, fit_plda, BenchmarkConfig, DpldaInit, PldaBackend};
use asdplda::calibration::fit_global;
use asdplda::dplda::{sweep_and_select, DevSet, ModelDims, TrainData, WarmStartOptions};
use asdplda::metrics::evaluate;

fn main() -> asdplda::Result<()> {
    let cfg = BenchmarkConfig::default();
    let t0 = Instant::now();
    let bench = build_benchmark(&cfg)?;
    let (front, _, scorer) = fit_plda(&bench.train, cfg.baseline_lda_dim)?;
    println!("system\tcondition\tactual_cllr\tmin_cllr\teer");
    for cal_set in &bench.dev {
        let raw = asdplda::benchmark::raw_scores(&front, &scorer, &cal_set.set, &cal_set.trials)?;
        let cal = fit_global(&raw, cfg.pi)?;
        let backend = PldaBackend { front: front.clone(), scorer: scorer.clone(), cal };
        let mut total = 0.0;
        for ev in &bench.eval {
            let r = evaluate(&backend.score_trials(&ev.set, &ev.trials)?)?;
            total += r.actual_cllr;
            println!("plda-cal-{}\t{}\t{:.4}\t{:.4}\t{:.4}", cal_set.condition, ev.condition, r.actual_cllr, r.min_cllr, r.eer);
        }
        println!("plda-cal-{}\tmean\t{:.4}", cal_set.condition, total / bench.eval.len() as f64);
    }
    let dims = ModelDims { lda_dim: cfg.lda_dim, m_dim: cfg.m_dim, z_dim: cfg.z_dim };
    let init = DpldaInit::fit(&bench.train, dims, WarmStartOptions::default())?;
    let dev: Vec<DevSet> = bench
        .dev
        .iter()
        .map(|d| DevSet { name: &d.condition, set: &d.set, m_vectors: None, trials: &d.trials })
        .collect();
    let data = TrainData { set: &bench.train, m_vectors: None };
    let t1 = Instant::now();
    let sweep = sweep_and_select(|s| init.model(s), data, &cfg.train, &cfg.seeds, &cfg.epochs, &dev)?;
    eprintln!("sweep took {:?}", t1.elapsed());
    for row in &sweep.table {
        eprintln!("seed {} epoch {} mean dev cllr {:.4}", row.seed, row.epoch, row.mean_cllr);
    }
    let warm = init.model(cfg.seeds[0])?;
    for (name, model) in [("warm", &warm), ("as-dplda", &sweep.best)] {
        let mut total = 0.0;
        for ev in &bench.eval {
            let r = evaluate(&model.score_trials(&ev.set, None, &ev.trials)?)?;
            total += r.actual_cllr;
            println!("{name}\t{}\t{:.4}\t{:.4}\t{:.4}", ev.condition, r.actual_cllr, r.min_cllr, r.eer);
        }
        println!("{name}\tmean\t{:.4}", total / bench.eval.len() as f64);
    }
    let pool = asdplda::EmbeddingSet::concat(&bench.dev.iter().map(|d| &d.set).collect::<Vec<_>>())?;
    let pooled_trials: Vec<_> = bench.dev.iter().flat_map(|d| d.trials.iter().cloned()).collect();
    let global = fit_global(&asdplda::benchmark::raw_scores(&front, &scorer, &pool, &pooled_trials)?, cfg.pi)?;
    let cond = asdplda::tbc::fit_cond_plda(&pool, None)?;
    let tcfg = asdplda::tbc::TbcConfig::new(global);
    let tbc = asdplda::tbc::TbcScorer::new(front.clone(), scorer.clone(), cond.clone(), pool.clone(), tcfg)?;
    let mut total = 0.0;
    for ev in &bench.eval {
        let sub = asdplda::benchmark::subsample_trials(&ev.trials, 4, 20);
        let t = Instant::now();
        let r = evaluate(&tbc.score_trials(&ev.set, &sub)?)?;
        let dt = t.elapsed();
        let t = Instant::now();
        let _ = sweep.best.score_trials(&ev.set, None, &sub)?;
        let dd = t.elapsed();
        let t = Instant::now();
        let _ = asdplda::benchmark::raw_scores(&front, &scorer, &ev.set, &sub)?;
        let dp = t.elapsed();
        total += r.actual_cllr;
        println!("tbc\t{}\t{:.4}\t{:.4}\t{:.4}\t{} trials tbc {:?} dplda {:?} plda {:?}", ev.condition, r.actual_cllr, r.min_cllr, r.eer, sub.len(), dt, dd, dp);
    }
    println!("tbc\tmean\t{:.4}", total / bench.eval.len() as f64);
    let strong = asdplda::tbc::TbcScorer::new(front.clone(), scorer.clone(), cond, pool, asdplda::tbc::TbcConfig { reg_weight: 1e6, ..tcfg })?;
    let ev = &bench.eval[3];
    let sub: Vec<_> = ev.trials.iter().step_by(50).cloned().collect();
    let a = strong.score_trials(&ev.set, &sub)?;
    let raw = asdplda::benchmark::raw_scores(&front, &scorer, &ev.set, &sub)?;
    let maxdev = a.scores().iter().zip(raw.scores()).map(|(l, s)| (l - global.apply(*s)).abs()).fold(0.0, f64::max);
    println!("reg1e6 max dev {maxdev:e}");
    let mut pdev = 0.0f64;
    for t in &sub {
        let (i, j) = (ev.set.position(&t.enroll_id).unwrap(), ev.set.position(&t.test_id).unwrap());
        let o = strong.score(ev.set.vector(i), ev.set.vector(j))?;
        pdev = pdev.max((o.cal.alpha - global.alpha).abs()).max((o.cal.beta - global.beta).abs());
    }
    println!("reg1e6 max param dev {pdev:e}");
    let ds: Vec<_> = bench
        .eval
        .iter()
        .map(|e| asdplda::analysis::ZDataset { name: &e.condition, set: &e.set, m_vectors: None })
        .collect();
    let za = asdplda::analysis::analyze_z(&sweep.best, &bench.train, None, &ds, 300)?;
    for a in &bench.eval {
        for b in &bench.eval {
            if a.condition < b.condition {
                println!("sep	{}	{}	{:.3}", a.condition, b.condition, za.separation(&a.condition, &b.condition).unwrap());
            }
        }
    }
    let ps: Vec<_> = bench
        .eval
        .iter()
        .map(|e| asdplda::analysis::ProbeSet { name: &e.condition, set: &e.set, m_vectors: None, trials: &e.trials })
        .collect();
    print!("{}", asdplda::analysis::probe_table_tsv(&asdplda::analysis::probe_z(&sweep.best, &bench.train, None, &ps)?));
    eprintln!("total {:?}", t0.elapsed());
    Ok(())
}
