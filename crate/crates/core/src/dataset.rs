//! Episodes, dataset generation and the line-oriented dataset file.
//!
//! File layout (UTF-8, `\n` line endings):
//!
//! ```text
//! # graphref-dataset v1 p=3 t=4 k=2 seed=1 sampling=uniform split=episode train=6 validation=2 test=2
//! # heldout 0,1,2;3,3,0            <- only in holdout_targets mode
//! 2,0,1 | 0,0,0 3,1,2 | 1
//! ```
//!
//! Each record is `target | distractors | target_position`. Records are
//! stored train first, then validation, then test.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{self, Rng, Stream};
use crate::world::{ObjectSpec, World};

const MAGIC: &str = "# graphref-dataset v1";

/// How distractors relate to the target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SamplingMode {
    /// K distinct non-target objects drawn uniformly.
    Uniform,
    /// Every distractor differs from the target in exactly this many properties.
    KDiff(usize),
}

/// How episodes are assigned to train/validation/test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SplitMode {
    /// i.i.d. episodes cut 60/20/20.
    Episode,
    /// This fraction of objects only ever appears as a target in test episodes.
    HoldoutTargets(f64),
}

fn parse_call<'a>(s: &'a str, name: &str) -> Option<&'a str> {
    s.strip_prefix(name)?.strip_prefix('(')?.strip_suffix(')')
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingMode::Uniform => f.write_str("uniform"),
            SamplingMode::KDiff(k) => write!(f, "k_diff({k})"),
        }
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "uniform" {
            return Ok(SamplingMode::Uniform);
        }
        parse_call(s, "k_diff")
            .and_then(|k| k.parse().ok())
            .map(SamplingMode::KDiff)
            .ok_or_else(|| Error::Config(format!("unknown sampling mode `{s}`")))
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitMode::Episode => f.write_str("episode"),
            SplitMode::HoldoutTargets(x) => write!(f, "holdout_targets({x})"),
        }
    }
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "episode" {
            return Ok(SplitMode::Episode);
        }
        parse_call(s, "holdout_targets")
            .and_then(|x| x.parse().ok())
            .map(SplitMode::HoldoutTargets)
            .ok_or_else(|| Error::Config(format!("unknown split mode `{s}`")))
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl TryFrom<String> for $ty {
            type Error = Error;
            fn try_from(s: String) -> Result<Self> {
                s.parse()
            }
        }
        impl From<$ty> for String {
            fn from(v: $ty) -> String {
                v.to_string()
            }
        }
    };
}

string_serde!(SamplingMode);
string_serde!(SplitMode);

/// One round of the game.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub target: ObjectSpec,
    pub distractors: Vec<ObjectSpec>,
    pub target_position: usize,
}

impl Episode {
    /// Candidates in presentation order: the target sits at `target_position`.
    pub fn candidates(&self) -> Vec<&ObjectSpec> {
        let mut out: Vec<&ObjectSpec> = self.distractors.iter().collect();
        out.insert(self.target_position, &self.target);
        out
    }

    pub fn num_candidates(&self) -> usize {
        self.distractors.len() + 1
    }

    fn check_distinct(&self) -> bool {
        let mut seen = HashSet::new();
        self.candidates().into_iter().all(|s| seen.insert(s))
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn check_feasible(world: &World, k: usize, mode: SamplingMode) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("need at least one distractor".into()));
    }
    match mode {
        SamplingMode::Uniform if k + 1 > world.size() => Err(Error::Infeasible(format!(
            "{} distinct candidates requested but the world has only {} objects",
            k + 1,
            world.size()
        ))),
        SamplingMode::KDiff(d) if d == 0 || d > world.properties() => Err(Error::Config(format!(
            "k_diff({d}) needs 1 <= k <= p = {}",
            world.properties()
        ))),
        SamplingMode::KDiff(d) => {
            let available = binomial(world.properties(), d) * (world.types() - 1).pow(d as u32);
            if available < k {
                Err(Error::Infeasible(format!(
                    "only {available} objects differ from a target in exactly {d} properties, need {k}"
                )))
            } else {
                Ok(())
            }
        }
        SamplingMode::Uniform => Ok(()),
    }
}

fn sample_with_target(
    rng: &mut Rng,
    world: &World,
    k: usize,
    mode: SamplingMode,
    target_index: usize,
) -> Episode {
    let target = world.spec_at(target_index);
    let distractors = match mode {
        SamplingMode::Uniform => index::sample(rng, world.size() - 1, k)
            .into_iter()
            .map(|i| world.spec_at(if i >= target_index { i + 1 } else { i }))
            .collect(),
        SamplingMode::KDiff(d) => {
            let pool: Vec<ObjectSpec> = (0..world.size())
                .map(|i| world.spec_at(i))
                .filter(|s| s.hamming(&target) == d)
                .collect();
            index::sample(rng, pool.len(), k)
                .into_iter()
                .map(|i| pool[i].clone())
                .collect()
        }
    };
    Episode {
        target,
        distractors,
        target_position: rng.gen_range(0..=k),
    }
}

/// Draws one episode with the target uniform over the whole world.
pub fn sample_episode(rng: &mut Rng, world: &World, k: usize, mode: SamplingMode) -> Result<Episode> {
    check_feasible(world, k, mode)?;
    let target = rng.gen_range(0..world.size());
    Ok(sample_with_target(rng, world, k, mode, target))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    /// 60/20/20, rounding validation and test; train takes the remainder.
    pub fn for_total(n: usize) -> Self {
        let fifth = (n as f64 * 0.2).round() as usize;
        Self {
            train: n - 2 * fifth,
            validation: fifth,
            test: fifth,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub world: World,
    pub k: usize,
    pub seed: u64,
    pub sampling: SamplingMode,
    pub split_mode: SplitMode,
    pub sizes: SplitSizes,
    /// Objects withheld from the target role outside the test split.
    pub heldout: Vec<ObjectSpec>,
    pub episodes: Vec<Episode>,
}

/// Generates a dataset. The result is a pure function of the arguments.
pub fn make_dataset(
    world: World,
    k: usize,
    n_episodes: usize,
    seed: u64,
    sampling: SamplingMode,
    split_mode: SplitMode,
) -> Result<Dataset> {
    if n_episodes < 10 {
        return Err(Error::Config(format!(
            "need at least 10 episodes, got {n_episodes}"
        )));
    }
    check_feasible(&world, k, sampling)?;
    let mut rng = rng::stream(seed, Stream::Dataset);
    let sizes = SplitSizes::for_total(n_episodes);

    let (heldout_idx, open_idx): (Vec<usize>, Vec<usize>) = match split_mode {
        SplitMode::Episode => (Vec::new(), (0..world.size()).collect()),
        SplitMode::HoldoutTargets(fraction) => {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::Config(format!(
                    "holdout fraction must lie in (0, 1), got {fraction}"
                )));
            }
            let n_held = (fraction * world.size() as f64).ceil() as usize;
            let open = world.size() - n_held.min(world.size());
            if n_held == 0 || open < k + 1 {
                return Err(Error::Infeasible(format!(
                    "holding out {n_held} of {} objects leaves {open} training targets, need at least {}",
                    world.size(),
                    k + 1
                )));
            }
            let mut held = index::sample(&mut rng, world.size(), n_held).into_vec();
            held.sort_unstable();
            let open = (0..world.size())
                .filter(|i| held.binary_search(i).is_err())
                .collect();
            (held, open)
        }
    };

    let mut episodes = Vec::with_capacity(n_episodes);
    for i in 0..n_episodes {
        let pool = if i >= sizes.train + sizes.validation && !heldout_idx.is_empty() {
            &heldout_idx
        } else {
            &open_idx
        };
        let target = pool[rng.gen_range(0..pool.len())];
        episodes.push(sample_with_target(&mut rng, &world, k, sampling, target));
    }

    Ok(Dataset {
        world,
        k,
        seed,
        sampling,
        split_mode,
        sizes,
        heldout: heldout_idx.into_iter().map(|i| world.spec_at(i)).collect(),
        episodes,
    })
}

impl Dataset {
    pub fn split(&self, which: Split) -> &[Episode] {
        let SplitSizes {
            train, validation, ..
        } = self.sizes;
        match which {
            Split::Train => &self.episodes[..train],
            Split::Validation => &self.episodes[train..train + validation],
            Split::Test => &self.episodes[train + validation..],
        }
    }

    pub fn train(&self) -> &[Episode] {
        self.split(Split::Train)
    }

    pub fn validation(&self) -> &[Episode] {
        self.split(Split::Validation)
    }

    pub fn test(&self) -> &[Episode] {
        self.split(Split::Test)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{MAGIC} p={} t={} k={} seed={} sampling={} split={} train={} validation={} test={}\n",
            self.world.properties(),
            self.world.types(),
            self.k,
            self.seed,
            self.sampling,
            self.split_mode,
            self.sizes.train,
            self.sizes.validation,
            self.sizes.test,
        );
        if matches!(self.split_mode, SplitMode::HoldoutTargets(_)) {
            let held: Vec<String> = self.heldout.iter().map(ToString::to_string).collect();
            out.push_str(&format!("# heldout {}\n", held.join(";")));
        }
        for ep in &self.episodes {
            let distractors: Vec<String> = ep.distractors.iter().map(ToString::to_string).collect();
            out.push_str(&format!(
                "{} | {} | {}\n",
                ep.target,
                distractors.join(" "),
                ep.target_position
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty file"))?;
        let fields = header
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::parse(1, "missing dataset header"))?;
        let mut kv = std::collections::HashMap::new();
        for field in fields.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::parse(1, format!("bad header field `{field}`")))?;
            kv.insert(key, value);
        }
        let get = |key: &str| {
            kv.get(key)
                .copied()
                .ok_or_else(|| Error::parse(1, format!("header lacks `{key}`")))
        };
        let num = |key: &str| -> Result<u64> {
            get(key)?
                .parse()
                .map_err(|e| Error::parse(1, format!("`{key}`: {e}")))
        };
        let world = World::new(num("p")? as usize, num("t")? as usize)?;
        let k = num("k")? as usize;
        let seed = num("seed")?;
        let sampling: SamplingMode = get("sampling")?.parse()?;
        let split_mode: SplitMode = get("split")?.parse()?;
        let sizes = SplitSizes {
            train: num("train")? as usize,
            validation: num("validation")? as usize,
            test: num("test")? as usize,
        };

        let parse_spec = |line: usize, s: &str| -> Result<ObjectSpec> {
            let spec: ObjectSpec = s.parse().map_err(|e: Error| Error::parse(line, e.to_string()))?;
            if !world.contains(&spec) {
                return Err(Error::parse(line, format!("spec [{spec}] outside the world")));
            }
            Ok(spec)
        };

        let mut heldout = Vec::new();
        let mut episodes = Vec::with_capacity(sizes.total());
        for (no, line) in lines {
            if let Some(held) = line.strip_prefix("# heldout ") {
                heldout = held
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_spec(no, s))
                    .collect::<Result<_>>()?;
                continue;
            }
            let parts: Vec<&str> = line.split(" | ").collect();
            let [target, distractors, position] = parts[..] else {
                return Err(Error::parse(no, "expected `target | distractors | position`"));
            };
            let ep = Episode {
                target: parse_spec(no, target)?,
                distractors: distractors
                    .split(' ')
                    .map(|s| parse_spec(no, s))
                    .collect::<Result<_>>()?,
                target_position: position
                    .parse()
                    .map_err(|e| Error::parse(no, format!("target position: {e}")))?,
            };
            if ep.distractors.len() != k || ep.target_position > k {
                return Err(Error::parse(no, format!("episode does not have K={k} distractors")));
            }
            if !ep.check_distinct() {
                return Err(Error::parse(no, "candidates are not pairwise distinct"));
            }
            episodes.push(ep);
        }
        if episodes.len() != sizes.total() {
            return Err(Error::parse(
                0,
                format!(
                    "header declares {} episodes, file has {}",
                    sizes.total(),
                    episodes.len()
                ),
            ));
        }
        Ok(Self {
            world,
            k,
            seed,
            sampling,
            split_mode,
            sizes,
            heldout,
            episodes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// SHA-256 of the serialized dataset, hex encoded.
    pub fn content_hash(&self) -> String {
        hex(&Sha256::digest(self.to_text().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> World {
        World::new(3, 4).unwrap()
    }

    #[test]
    fn episodes_have_distinct_candidates() {
        let mut rng = rng::stream(3, Stream::Dataset);
        for _ in 0..500 {
            let ep = sample_episode(&mut rng, &world(), 9, SamplingMode::Uniform).unwrap();
            assert_eq!(ep.num_candidates(), 10);
            assert!(ep.check_distinct());
            assert_eq!(ep.candidates()[ep.target_position], &ep.target);
        }
    }

    #[test]
    fn k_diff_distractors_differ_in_exactly_k() {
        let mut rng = rng::stream(4, Stream::Dataset);
        for d in 1..=3 {
            for _ in 0..200 {
                let ep = sample_episode(&mut rng, &world(), 3, SamplingMode::KDiff(d)).unwrap();
                assert!(ep.distractors.iter().all(|x| x.hamming(&ep.target) == d));
                assert!(ep.check_distinct());
            }
        }
    }

    #[test]
    fn infeasible_requests() {
        let mut rng = rng::stream(0, Stream::Dataset);
        assert!(sample_episode(&mut rng, &world(), 63, SamplingMode::Uniform).is_ok());
        assert!(matches!(
            sample_episode(&mut rng, &world(), 64, SamplingMode::Uniform),
            Err(Error::Infeasible(_))
        ));
        // exactly 9 objects sit at distance 1 from any target when p=3, t=4
        assert!(sample_episode(&mut rng, &world(), 9, SamplingMode::KDiff(1)).is_ok());
        assert!(matches!(
            sample_episode(&mut rng, &world(), 10, SamplingMode::KDiff(1)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn split_sizes() {
        let s = SplitSizes::for_total(10_000);
        assert_eq!((s.train, s.validation, s.test), (6000, 2000, 2000));
        let s = SplitSizes::for_total(13);
        assert_eq!((s.train, s.validation, s.test), (7, 3, 3));
    }

    #[test]
    fn dataset_needs_ten_episodes() {
        assert!(matches!(
            make_dataset(world(), 2, 9, 1, SamplingMode::Uniform, SplitMode::Episode),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn holdout_keeps_targets_out_of_training() {
        let ds = make_dataset(
            world(),
            4,
            2000,
            5,
            SamplingMode::Uniform,
            SplitMode::HoldoutTargets(0.2),
        )
        .unwrap();
        assert_eq!(ds.heldout.len(), 13);
        let held: HashSet<_> = ds.heldout.iter().collect();
        let train_targets: HashSet<_> = ds.train().iter().map(|e| &e.target).collect();
        assert_eq!(train_targets.len(), 64 - 13);
        assert!(train_targets.is_disjoint(&held));
        assert!(ds.validation().iter().all(|e| !held.contains(&e.target)));
        assert!(ds.test().iter().all(|e| held.contains(&e.target)));
    }

    #[test]
    fn holdout_infeasible_when_too_few_training_targets() {
        let w = World::new(2, 2).unwrap();
        assert!(matches!(
            make_dataset(w, 2, 100, 1, SamplingMode::Uniform, SplitMode::HoldoutTargets(0.5)),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(
            make_dataset(world(), 2, 100, 1, SamplingMode::Uniform, SplitMode::HoldoutTargets(1.0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn text_round_trip_is_exact() {
        for split in [SplitMode::Episode, SplitMode::HoldoutTargets(0.25)] {
            let ds = make_dataset(world(), 3, 50, 9, SamplingMode::KDiff(2), split).unwrap();
            let text = ds.to_text();
            let back = Dataset::from_text(&text).unwrap();
            assert_eq!(back, ds);
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn parse_rejects_malformed_records() {
        let ds = make_dataset(world(), 2, 10, 1, SamplingMode::Uniform, SplitMode::Episode).unwrap();
        let text = ds.to_text();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[1] = "0,0,0 | 0,0,0 1,1,1 | 0";
        let bad = lines.join("\n");
        assert!(matches!(Dataset::from_text(&bad), Err(Error::Parse { line: 2, .. })));
        let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(Dataset::from_text(&truncated).is_err());
    }

    #[test]
    fn mode_strings() {
        assert_eq!("k_diff(3)".parse::<SamplingMode>().unwrap(), SamplingMode::KDiff(3));
        assert_eq!(
            "holdout_targets(0.2)".parse::<SplitMode>().unwrap(),
            SplitMode::HoldoutTargets(0.2)
        );
        assert_eq!(SplitMode::HoldoutTargets(0.2).to_string(), "holdout_targets(0.2)");
        assert!("k_diff(x)".parse::<SamplingMode>().is_err());
    }
}
