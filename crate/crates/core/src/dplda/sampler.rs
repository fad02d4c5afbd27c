use std::collections::HashMap;

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::data::{EmbeddingSet, Label, SampleMeta, Trial};
use crate::error::{Error, Result};

/// Mini-batch shape. Every selected speaker contributes two samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSpec {
    pub n_speakers: usize,
}

impl BatchSpec {
    pub const SAMPLES_PER_SPEAKER: usize = 2;

    pub fn new(n_speakers: usize) -> Result<Self> {
        if n_speakers < 2 {
            return Err(Error::Config(format!(
                "a batch needs at least 2 speakers, got {n_speakers}"
            )));
        }
        Ok(BatchSpec { n_speakers })
    }
}

#[derive(Debug, Clone)]
struct Speaker {
    /// Dataset rows grouped by session, sessions in order of first appearance.
    sessions: Vec<Vec<usize>>,
}

/// Training samples grouped by speaker and session. Speakers with fewer than
/// two samples cannot form a pair and are left out.
#[derive(Debug, Clone)]
pub struct TrainingPool {
    speakers: Vec<Speaker>,
    /// Interned domain of every dataset row (indexed by row).
    domain: HashMap<usize, u32>,
    /// Interned (speaker, session) of every row.
    session: HashMap<usize, (u32, u32)>,
    n_samples: usize,
}

impl TrainingPool {
    /// Pool over `rows` of a dataset whose metadata is `meta`.
    pub fn new(meta: &[SampleMeta], rows: &[usize]) -> Result<Self> {
        let mut spk_index: HashMap<&str, usize> = HashMap::new();
        let mut grouped: Vec<(Vec<&str>, Vec<Vec<usize>>)> = Vec::new();
        let mut domain_ids: HashMap<&str, u32> = HashMap::new();
        let mut domain = HashMap::new();
        for &r in rows {
            let m = meta.get(r).ok_or_else(|| {
                Error::InvalidData(format!("row {r} outside metadata of {} samples", meta.len()))
            })?;
            let next = domain_ids.len() as u32;
            domain.insert(r, *domain_ids.entry(m.domain.as_str()).or_insert(next));
            let s = *spk_index.entry(m.speaker_id.as_str()).or_insert_with(|| {
                grouped.push((Vec::new(), Vec::new()));
                grouped.len() - 1
            });
            let (names, sessions) = &mut grouped[s];
            match names.iter().position(|n| *n == m.session_id) {
                Some(k) => sessions[k].push(r),
                None => {
                    names.push(m.session_id.as_str());
                    sessions.push(vec![r]);
                }
            }
        }
        let mut speakers = Vec::new();
        let mut session = HashMap::new();
        let mut n_samples = 0;
        for (_, sessions) in grouped {
            let count: usize = sessions.iter().map(Vec::len).sum();
            if count < 2 {
                continue;
            }
            let si = speakers.len() as u32;
            for (k, sess) in sessions.iter().enumerate() {
                for &r in sess {
                    session.insert(r, (si, k as u32));
                }
            }
            n_samples += count;
            speakers.push(Speaker { sessions });
        }
        Ok(TrainingPool {
            speakers,
            domain,
            session,
            n_samples,
        })
    }

    /// Pool over every sample of a set with metadata.
    pub fn from_set(set: &EmbeddingSet) -> Result<Self> {
        let meta = set.require_meta("training")?;
        let rows: Vec<usize> = (0..set.len()).collect();
        TrainingPool::new(meta, &rows)
    }

    pub fn n_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Mini-batches per epoch: `ceil(samples / (2·n_speakers))`.
    pub fn batches_per_epoch(&self, spec: &BatchSpec) -> usize {
        self.n_samples
            .div_ceil(BatchSpec::SAMPLES_PER_SPEAKER * spec.n_speakers)
            .max(1)
    }
}

/// Sampled rows and the labelled pairs between them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Minibatch {
    /// Dataset rows, two per selected speaker.
    pub rows: Vec<usize>,
    /// Pairs of positions into `rows`, `i < j`.
    pub pairs: Vec<(usize, usize, Label)>,
}

impl Minibatch {
    pub fn to_trials(&self, set: &EmbeddingSet) -> Vec<Trial> {
        self.pairs
            .iter()
            .map(|&(i, j, l)| Trial::new(set.id(self.rows[i]), set.id(self.rows[j]), l))
            .collect()
    }
}

/// Picks `spec.n_speakers` speakers without replacement and two samples from
/// each (from two different sessions when the speaker has them), then keeps
/// every pair except same-session targets and cross-domain impostors.
pub fn sample_minibatch(pool: &TrainingPool, spec: &BatchSpec, rng: &mut impl Rng) -> Result<Minibatch> {
    if spec.n_speakers < 2 {
        return Err(Error::Config("a batch needs at least 2 speakers".into()));
    }
    if pool.n_speakers() < spec.n_speakers {
        return Err(Error::InsufficientData(format!(
            "pool has {} usable speakers, batch needs {}",
            pool.n_speakers(),
            spec.n_speakers
        )));
    }
    let chosen = sample_indices(rng, pool.n_speakers(), spec.n_speakers);
    let mut rows = Vec::with_capacity(2 * spec.n_speakers);
    for s in chosen.iter() {
        let sessions = &pool.speakers[s].sessions;
        if sessions.len() >= 2 {
            let pick = sample_indices(rng, sessions.len(), 2);
            for k in pick.iter() {
                let sess = &sessions[k];
                rows.push(sess[rng.random_range(0..sess.len())]);
            }
        } else {
            let sess = &sessions[0];
            let pick = sample_indices(rng, sess.len(), 2);
            rows.extend(pick.iter().map(|k| sess[k]));
        }
    }
    let mut pairs = Vec::new();
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let (ri, rj) = (rows[i], rows[j]);
            if ri == rj {
                continue;
            }
            let (si, ki) = pool.session[&ri];
            let (sj, kj) = pool.session[&rj];
            if si == sj {
                if ki != kj {
                    pairs.push((i, j, Label::Target));
                }
            } else if pool.domain[&ri] == pool.domain[&rj] {
                pairs.push((i, j, Label::Impostor));
            }
        }
    }
    Ok(Minibatch { rows, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::seeded_rng;

    fn meta(spk: &str, sess: &str, dom: &str, i: usize) -> SampleMeta {
        SampleMeta::new(format!("{spk}-{sess}-{i}"), spk, format!("{spk}-{sess}"), dom, dom)
    }

    #[test]
    fn two_speakers_give_six_pairs() {
        let m = vec![
            meta("a", "1", "d", 0),
            meta("a", "2", "d", 1),
            meta("b", "1", "d", 2),
            meta("b", "2", "d", 3),
        ];
        let pool = TrainingPool::new(&m, &[0, 1, 2, 3]).unwrap();
        let b = sample_minibatch(&pool, &BatchSpec::new(2).unwrap(), &mut seeded_rng(1, 0)).unwrap();
        assert_eq!(b.pairs.len(), 6);
        assert_eq!(b.pairs.iter().filter(|p| p.2.is_target()).count(), 2);
    }

    #[test]
    fn single_session_speaker_gives_no_target() {
        let m = vec![
            meta("a", "1", "d", 0),
            meta("a", "1", "d", 1),
            meta("b", "1", "d", 2),
            meta("b", "2", "d", 3),
        ];
        let pool = TrainingPool::new(&m, &[0, 1, 2, 3]).unwrap();
        let b = sample_minibatch(&pool, &BatchSpec::new(2).unwrap(), &mut seeded_rng(2, 0)).unwrap();
        assert_eq!(b.pairs.iter().filter(|p| p.2.is_target()).count(), 1);
        assert_eq!(b.pairs.len(), 5);
    }

    #[test]
    fn cross_domain_impostors_dropped() {
        let m = vec![
            meta("a", "1", "x", 0),
            meta("a", "2", "x", 1),
            meta("b", "1", "y", 2),
            meta("b", "2", "y", 3),
        ];
        let pool = TrainingPool::new(&m, &[0, 1, 2, 3]).unwrap();
        let b = sample_minibatch(&pool, &BatchSpec::new(2).unwrap(), &mut seeded_rng(3, 0)).unwrap();
        assert!(b.pairs.iter().all(|p| p.2.is_target()));
        assert_eq!(b.pairs.len(), 2);
    }

    #[test]
    fn small_pool_is_an_error() {
        let m = vec![meta("a", "1", "d", 0), meta("a", "2", "d", 1), meta("b", "1", "d", 2)];
        let pool = TrainingPool::new(&m, &[0, 1, 2]).unwrap();
        assert_eq!(pool.n_speakers(), 1);
        assert!(sample_minibatch(&pool, &BatchSpec::new(2).unwrap(), &mut seeded_rng(0, 0)).is_err());
        assert!(BatchSpec::new(1).is_err());
    }
}
