//! Post-hoc analyses of trained agents: how many symbols the sender uses,
//! whether the receiver really listens to the symbol, whether the receiver
//! ignores candidate order, and multi-seed sweeps over |V| × K.
//!
//! Every analysis runs the agents in evaluation mode (argmax messages).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::Agents;
use crate::dataset::Episode;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::training::{evaluate, evaluate_forced, train, TrainConfig};
use crate::world::GraphCache;

/// How often each symbol is the sender's argmax over a set of targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolUsageReport {
    pub vocab: usize,
    pub counts: Vec<usize>,
    pub distinct_count: usize,
    pub percent_of_vocab: f64,
}

impl SymbolUsageReport {
    pub fn from_symbols(symbols: &[usize], vocab: usize) -> Result<Self> {
        let mut counts = vec![0; vocab];
        for &s in symbols {
            *counts.get_mut(s).ok_or_else(|| {
                Error::Config(format!("symbol {s} outside a vocabulary of {vocab}"))
            })? += 1;
        }
        let distinct_count = counts.iter().filter(|&&c| c > 0).count();
        Ok(Self {
            vocab,
            percent_of_vocab: 100.0 * distinct_count as f64 / vocab as f64,
            counts,
            distinct_count,
        })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["symbol", "count"])?;
        for (s, c) in self.counts.iter().enumerate() {
            w.write_record([s.to_string(), c.to_string()])?;
        }
        Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8"))
    }
}

/// Symbol usage of the sender over the targets of `episodes`.
pub fn symbol_usage(agents: &Agents, cache: &GraphCache, episodes: &[Episode]) -> Result<SymbolUsageReport> {
    let report = evaluate(agents, cache, episodes)?;
    let symbols: Vec<usize> = report.predictions.iter().map(|p| p.symbol).collect();
    SymbolUsageReport::from_symbols(&symbols, agents.vocab_size())
}

/// `entries[s][s2]` is the fraction of `D_s` still answered correctly when
/// the message is replaced by `s2`, where `D_s` holds the episodes the
/// sender described with `s` and the receiver got right. Rows with empty
/// `D_s` are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessMatrix {
    pub vocab: usize,
    pub support: Vec<usize>,
    pub entries: Vec<Option<Vec<f64>>>,
}

impl RobustnessMatrix {
    pub fn is_defined(&self, symbol: usize) -> bool {
        self.entries[symbol].is_some()
    }

    pub fn defined_rows(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(s, row)| row.as_deref().map(|r| (s, r)))
    }

    /// Defined rows whose diagonal is not the row maximum. With `strict`,
    /// a tie with another symbol also counts as a violation.
    pub fn diagonal_violations(&self, strict: bool) -> Vec<usize> {
        self.defined_rows()
            .filter(|&(s, row)| {
                row.iter().enumerate().any(|(j, &v)| {
                    j != s && if strict { v >= row[s] } else { v > row[s] }
                })
            })
            .map(|(s, _)| s)
            .collect()
    }

    /// Rows are the symbol the sender used; undefined entries are empty.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["symbol".to_string(), "support".to_string()];
        header.extend((0..self.vocab).map(|s| format!("forced_{s}")));
        w.write_record(&header)?;
        for (s, row) in self.entries.iter().enumerate() {
            let mut rec = vec![s.to_string(), self.support[s].to_string()];
            match row {
                Some(r) => rec.extend(r.iter().map(|v| v.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), self.vocab)),
            }
            w.write_record(&rec)?;
        }
        Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8"))
    }
}

/// Replays every correctly solved episode with each possible symbol forced
/// into the channel. Candidate orderings are reused, so the symbol is the
/// only thing that changes.
pub fn robustness_matrix(agents: &Agents, cache: &GraphCache, episodes: &[Episode]) -> Result<RobustnessMatrix> {
    let vocab = agents.vocab_size();
    let base = evaluate(agents, cache, episodes)?;
    let (solved, sent): (Vec<Episode>, Vec<usize>) = episodes
        .iter()
        .zip(&base.predictions)
        .filter(|(_, p)| p.correct)
        .map(|(e, p)| (e.clone(), p.symbol))
        .unzip();
    let mut support = vec![0; vocab];
    for &s in &sent {
        support[s] += 1;
    }
    let columns: Vec<Vec<usize>> = if solved.is_empty() {
        vec![vec![0; vocab]; vocab]
    } else {
        (0..vocab)
            .into_par_iter()
            .map(|forced| -> Result<Vec<usize>> {
                let report = evaluate_forced(agents, cache, &solved, Some(&vec![forced; solved.len()]))?;
                let mut hits = vec![0; vocab];
                for (p, &s) in report.predictions.iter().zip(&sent) {
                    hits[s] += p.correct as usize;
                }
                Ok(hits)
            })
            .collect::<Result<_>>()?
    };
    let entries = (0..vocab)
        .map(|s| {
            (support[s] > 0).then(|| {
                columns
                    .iter()
                    .map(|col| col[s] as f64 / support[s] as f64)
                    .collect()
            })
        })
        .collect();
    Ok(RobustnessMatrix {
        vocab,
        support,
        entries,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationReport {
    pub episodes: usize,
    pub permutations: usize,
    pub base_accuracy: f64,
    pub permuted_accuracy: f64,
    /// Fraction of (episode, shuffle) pairs whose correctness matches the
    /// unshuffled episode.
    pub agreement_rate: f64,
    /// Accuracy with every candidate list rotated by `r`, for `r` in `0..=K`.
    pub rotation_accuracy: Vec<f64>,
}

/// `episode` with its candidates reordered so that new slot `i` holds old
/// slot `order[i]`.
pub fn reorder(episode: &Episode, order: &[usize]) -> Episode {
    let candidates = episode.candidates();
    let target_position = order
        .iter()
        .position(|&o| o == episode.target_position)
        .expect("order is a permutation");
    Episode {
        target: episode.target.clone(),
        distractors: order
            .iter()
            .filter(|&&o| o != episode.target_position)
            .map(|&o| candidates[o].clone())
            .collect(),
        target_position,
    }
}

/// Replays `episodes` under `n_permutations` random candidate shuffles each
/// and under every cyclic rotation of the candidates.
pub fn permutation_test(
    agents: &Agents,
    cache: &GraphCache,
    episodes: &[Episode],
    n_permutations: usize,
    rng: &mut Rng,
) -> Result<PermutationReport> {
    if episodes.is_empty() {
        return Err(Error::Config("permutation test needs episodes".into()));
    }
    let group = episodes[0].num_candidates();
    let base = evaluate(agents, cache, episodes)?;

    let mut shuffled = Vec::with_capacity(episodes.len() * n_permutations);
    for e in episodes {
        let mut order: Vec<usize> = (0..group).collect();
        for _ in 0..n_permutations {
            order.shuffle(rng);
            shuffled.push(reorder(e, &order));
        }
    }
    let (mut agree, mut correct) = (0usize, 0usize);
    if !shuffled.is_empty() {
        let report = evaluate(agents, cache, &shuffled)?;
        for (i, p) in report.predictions.iter().enumerate() {
            agree += (p.correct == base.predictions[i / n_permutations].correct) as usize;
            correct += p.correct as usize;
        }
    }
    let trials = shuffled.len().max(1) as f64;

    let rotation_accuracy = (0..group)
        .map(|r| {
            let order: Vec<usize> = (0..group).map(|i| (i + group - r) % group).collect();
            let rotated: Vec<Episode> = episodes.iter().map(|e| reorder(e, &order)).collect();
            evaluate(agents, cache, &rotated).map(|rep| rep.accuracy)
        })
        .collect::<Result<_>>()?;

    Ok(PermutationReport {
        episodes: episodes.len(),
        permutations: n_permutations,
        base_accuracy: base.accuracy,
        permuted_accuracy: if shuffled.is_empty() { base.accuracy } else { correct as f64 / trials },
        agreement_rate: if shuffled.is_empty() { 1.0 } else { agree as f64 / trials },
        rotation_accuracy,
    })
}

/// Mean with two spreads: the standard error of the mean (sample standard
/// deviation over √n) and the population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sem: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        let sem = if n > 1 {
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        Some(Self {
            n,
            mean,
            sem,
            std: (ss / n as f64).sqrt(),
        })
    }
}

/// One finished training run of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub vocab: usize,
    pub k: usize,
    pub seed: u64,
    pub config_hash: String,
    pub accuracy: f64,
    pub distinct_symbols: usize,
    pub best_epoch: usize,
}

/// A run that did not produce a result, with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub vocab: usize,
    pub k: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub vocab: usize,
    pub k: usize,
    pub accuracy: Option<Summary>,
    pub distinct_symbols: Option<Summary>,
    pub percent_of_vocab: Option<Summary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub vocabs: Vec<usize>,
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub runs: Vec<SweepRun>,
    pub failures: Vec<SweepFailure>,
    /// Row-major over `vocabs` × `ks`.
    pub cells: Vec<SweepCell>,
}

/// Trains `base` for every (|V|, K, seed) combination in parallel. Each run
/// generates its own dataset from its seed. Failed runs are reported in
/// `failures` and leave their cell short of seeds, or empty.
pub fn sweep(base: &TrainConfig, vocabs: &[usize], ks: &[usize], seeds: &[u64]) -> Result<SweepReport> {
    if vocabs.is_empty() || ks.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one |V|, K and seed".into()));
    }
    let jobs: Vec<(usize, usize, u64)> = vocabs
        .iter()
        .flat_map(|&v| ks.iter().flat_map(move |&k| seeds.iter().map(move |&s| (v, k, s))))
        .collect();
    let outcomes: Vec<std::result::Result<SweepRun, SweepFailure>> = jobs
        .par_iter()
        .map(|&(vocab, k, seed)| {
            let config = TrainConfig {
                vocab_size: vocab,
                k,
                seed,
                ..base.clone()
            };
            let run = config
                .make_dataset()
                .and_then(|ds| train(&config, &ds));
            match run {
                Ok(out) => Ok(SweepRun {
                    vocab,
                    k,
                    seed,
                    config_hash: config.hash(),
                    accuracy: out.test.accuracy,
                    distinct_symbols: out.test.distinct_symbols,
                    best_epoch: out.best_epoch,
                }),
                Err(e) => Err(SweepFailure {
                    vocab,
                    k,
                    seed,
                    reason: e.to_string(),
                }),
            }
        })
        .collect();
    let (mut runs, mut failures) = (Vec::new(), Vec::new());
    for o in outcomes {
        match o {
            Ok(r) => runs.push(r),
            Err(f) => failures.push(f),
        }
    }
    let cells = summarise(vocabs, ks, &runs);
    Ok(SweepReport {
        vocabs: vocabs.to_vec(),
        ks: ks.to_vec(),
        seeds: seeds.to_vec(),
        runs,
        failures,
        cells,
    })
}

/// Aggregates runs into one cell per (|V|, K), in `vocabs` × `ks` order.
pub fn summarise(vocabs: &[usize], ks: &[usize], runs: &[SweepRun]) -> Vec<SweepCell> {
    let mut by_cell: BTreeMap<(usize, usize), Vec<&SweepRun>> = BTreeMap::new();
    for r in runs {
        by_cell.entry((r.vocab, r.k)).or_default().push(r);
    }
    let mut cells = Vec::new();
    for &vocab in vocabs {
        for &k in ks {
            let rs = by_cell.get(&(vocab, k)).map(Vec::as_slice).unwrap_or(&[]);
            let col = |f: &dyn Fn(&SweepRun) -> f64| Summary::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            cells.push(SweepCell {
                vocab,
                k,
                accuracy: col(&|r| r.accuracy),
                distinct_symbols: col(&|r| r.distinct_symbols as f64),
                percent_of_vocab: col(&|r| 100.0 * r.distinct_symbols as f64 / r.vocab as f64),
            });
        }
    }
    cells
}

impl SweepReport {
    pub fn cell(&self, vocab: usize, k: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.vocab == vocab && c.k == k)
    }

    /// Cells without a single finished run.
    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        self.cells
            .iter()
            .filter(|c| c.accuracy.is_none())
            .map(|c| (c.vocab, c.k))
            .collect()
    }

    /// Symbol-usage table: one row per |V|, one column per K, each entry
    /// `mean ± sem (percent ± sem)`.
    pub fn usage_table(&self) -> String {
        self.table(|c| match (c.distinct_symbols, c.percent_of_vocab) {
            (Some(d), Some(p)) => format!("{:.2} ± {:.2} ({:.2} ± {:.2})", d.mean, d.sem, p.mean, p.sem),
            _ => "missing".into(),
        })
    }

    pub fn accuracy_table(&self) -> String {
        self.table(|c| match c.accuracy {
            Some(a) => format!("{:.3} ± {:.3}", a.mean, a.sem),
            None => "missing".into(),
        })
    }

    fn table(&self, entry: impl Fn(&SweepCell) -> String) -> String {
        let mut out = String::from("| Vocab Size |");
        for k in &self.ks {
            let _ = write!(out, " {k} distractors |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.ks.len()));
        for &v in &self.vocabs {
            let _ = write!(out, "\n| {v} |");
            for &k in &self.ks {
                let c = self.cell(v, k).expect("every grid cell is summarised");
                let _ = write!(out, " {} |", entry(c));
            }
        }
        out.push('\n');
        out
    }

    /// One row per cell with mean, standard error and population standard
    /// deviation of accuracy and distinct symbols. Missing cells have
    /// `n = 0` and empty statistics.
    pub fn cells_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "vocab", "k", "n", "accuracy_mean", "accuracy_sem", "accuracy_std", "symbols_mean",
            "symbols_sem", "symbols_std", "percent_mean", "percent_sem",
        ])?;
        for c in &self.cells {
            let mut rec = vec![c.vocab.to_string(), c.k.to_string()];
            let fmt = |s: Option<Summary>, std: bool| -> Vec<String> {
                match s {
                    Some(s) if std => vec![s.mean.to_string(), s.sem.to_string(), s.std.to_string()],
                    Some(s) => vec![s.mean.to_string(), s.sem.to_string()],
                    None => vec![String::new(); if std { 3 } else { 2 }],
                }
            };
            rec.push(c.accuracy.map_or(0, |s| s.n).to_string());
            rec.extend(fmt(c.accuracy, true));
            rec.extend(fmt(c.distinct_symbols, true));
            rec.extend(fmt(c.percent_of_vocab, false));
            w.write_record(&rec)?;
        }
        Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8"))
    }

    pub fn runs_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.runs {
            w.serialize(r)?;
        }
        Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8"))
    }

    /// Writes `runs.csv`, `cells.csv`, `table.md` and `summary.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let table = format!(
            "Distinct symbols\n\n{}\nTest accuracy\n\n{}",
            self.usage_table(),
            self.accuracy_table()
        );
        let files = [
            ("runs.csv", self.runs_csv()?),
            ("cells.csv", self.cells_csv()?),
            ("table.md", table),
            ("summary.json", serde_json::to_string_pretty(self)?),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
