//! Withholding regimes and the 80/10/10 partition of what remains.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{entity_symbol, Dataset, Example, Form, Gender, Lexicon};
use crate::{seeded_rng, RngStream};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HoldoutError {
    #[error("unknown experiment id `{0}` (expected E1, E2, E3, E4a, E4b, E5a or E5b)")]
    UnknownExperiment(String),
    #[error("invalid holdout specification: {0}")]
    InvalidSpec(String),
    #[error("cannot split {0} available examples (need at least 10)")]
    TooFewExamples(usize),
    #[error("withheld example {0} does not belong to any generalization subset")]
    Unclassified(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentId {
    E1,
    E2,
    E3,
    E4a,
    E4b,
    E5a,
    E5b,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 7] = [
        ExperimentId::E1,
        ExperimentId::E2,
        ExperimentId::E3,
        ExperimentId::E4a,
        ExperimentId::E4b,
        ExperimentId::E5a,
        ExperimentId::E5b,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::E1 => "E1",
            ExperimentId::E2 => "E2",
            ExperimentId::E3 => "E3",
            ExperimentId::E4a => "E4a",
            ExperimentId::E4b => "E4b",
            ExperimentId::E5a => "E5a",
            ExperimentId::E5b => "E5b",
        }
    }

    fn withholds_alice_alice(self) -> bool {
        !matches!(self, ExperimentId::E1 | ExperimentId::E3)
    }

    fn withholds_subject_transitive(self) -> bool {
        matches!(self, ExperimentId::E4a | ExperimentId::E4b)
    }

    fn withholds_object(self) -> bool {
        matches!(self, ExperimentId::E5a | ExperimentId::E5b)
    }

    fn withholds_subject_intransitive(self) -> bool {
        matches!(self, ExperimentId::E4b | ExperimentId::E5b)
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = HoldoutError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| HoldoutError::UnknownExperiment(s.to_string()))
    }
}

/// Which sentences an experiment keeps out of training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutSpec {
    pub experiment: ExperimentId,
    /// Surface names whose reflexive contexts are withheld; the first one
    /// plays the role of Alice in the single-name experiments.
    pub withheld_names: Vec<String>,
    pub withheld_gender: Gender,
}

impl HoldoutSpec {
    /// Spec for a single-name experiment (anything but E3).
    pub fn new(experiment: ExperimentId, lexicon: &Lexicon) -> Result<Self, HoldoutError> {
        if experiment == ExperimentId::E3 {
            return Err(HoldoutError::InvalidSpec(
                "E3 needs a withheld-name count; use HoldoutSpec::experiment3".into(),
            ));
        }
        let alice = lexicon
            .female_names
            .first()
            .ok_or_else(|| HoldoutError::InvalidSpec("lexicon has no feminine names".into()))?;
        Ok(HoldoutSpec {
            experiment,
            withheld_names: vec![alice.clone()],
            withheld_gender: Gender::Feminine,
        })
    }

    /// E3 with the first `k` names of `gender` withheld, in lexicon order
    /// (Alice, Claire, Eliza, ... for the feminine default).
    pub fn experiment3(k: usize, gender: Gender, lexicon: &Lexicon) -> Result<Self, HoldoutError> {
        let pool = lexicon.names_of(gender);
        if k == 0 || k >= pool.len() {
            return Err(HoldoutError::InvalidSpec(format!(
                "E3 must withhold between 1 and {} {gender} names, got {k}",
                pool.len().saturating_sub(1)
            )));
        }
        Ok(HoldoutSpec {
            experiment: ExperimentId::E3,
            withheld_names: pool[..k].to_vec(),
            withheld_gender: gender,
        })
    }

    pub fn validate(&self, lexicon: &Lexicon) -> Result<(), HoldoutError> {
        if self.withheld_names.is_empty() {
            return Err(HoldoutError::InvalidSpec("no withheld names".into()));
        }
        for n in &self.withheld_names {
            if lexicon.gender_of(n) != Some(self.withheld_gender) {
                return Err(HoldoutError::InvalidSpec(format!(
                    "`{n}` is not a {} name of the lexicon",
                    self.withheld_gender
                )));
            }
        }
        match self.experiment {
            ExperimentId::E3 => {
                let pool = lexicon.names_of(self.withheld_gender).len();
                if self.withheld_names.len() >= pool {
                    return Err(HoldoutError::InvalidSpec(format!(
                        "E3 must leave at least one trained {} antecedent",
                        self.withheld_gender
                    )));
                }
            }
            _ if self.withheld_names.len() != 1 => {
                return Err(HoldoutError::InvalidSpec(format!(
                    "{} withholds exactly one name",
                    self.experiment
                )))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.withheld_names.len()
    }

    /// Name of the generalization subset `example` falls into, or `None`
    /// when the example stays available for training.
    pub fn subset_of(&self, example: &Example) -> Option<String> {
        if self.experiment == ExperimentId::E3 {
            let subject = &example.subject;
            if !self.withheld_names.contains(subject) {
                return None;
            }
            let sym = entity_symbol(subject);
            return match example.form {
                Form::Reflexive => Some(format!("refl-{sym}")),
                Form::Transitive if example.object.as_ref() == Some(subject) => {
                    Some(format!("{sym}-verbs-{sym}"))
                }
                _ => None,
            };
        }

        let alice = &self.withheld_names[0];
        let sym = entity_symbol(alice);
        let exp = self.experiment;
        let subject_is_alice = &example.subject == alice;
        let object_is_alice = example.object_name() == Some(alice.as_str());
        match example.form {
            Form::Reflexive if subject_is_alice => Some(format!("{sym}-reflexive")),
            Form::Transitive if subject_is_alice && exp.withholds_subject_transitive() => {
                Some(format!("{sym}-subject-trans"))
            }
            Form::Transitive if subject_is_alice && object_is_alice && exp.withholds_alice_alice() => {
                Some(format!("{sym}-verbs-{sym}"))
            }
            Form::Transitive if object_is_alice && exp.withholds_object() => {
                Some(format!("{sym}-object"))
            }
            Form::Intransitive if subject_is_alice && exp.withholds_subject_intransitive() => {
                Some(format!("{sym}-subject-intrans"))
            }
            _ => None,
        }
    }
}

/// Result of applying a holdout spec to the full dataset.
#[derive(Debug, Clone)]
pub struct Withheld {
    pub subsets: BTreeMap<String, Vec<Example>>,
    pub available: Vec<Example>,
}

impl Withheld {
    pub fn len(&self) -> usize {
        self.subsets.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All withheld examples in canonical order.
    pub fn examples(&self) -> Vec<Example> {
        let mut all: Vec<Example> = self.subsets.values().flatten().cloned().collect();
        all.sort_by_key(|e| e.id);
        all
    }
}

/// Partitions `dataset` into named withheld subsets and the available pool.
pub fn withheld_set(spec: &HoldoutSpec, dataset: &Dataset) -> Result<Withheld, HoldoutError> {
    spec.validate(&dataset.lexicon)?;
    let (withheld, available): (Vec<Example>, Vec<Example>) = dataset
        .examples
        .iter()
        .cloned()
        .partition(|e| spec.subset_of(e).is_some());
    let subsets = generalization_subsets(spec, &withheld)?;
    Ok(Withheld { subsets, available })
}

/// Names every withheld example; each lands in exactly one subset.
pub fn generalization_subsets(
    spec: &HoldoutSpec,
    withheld: &[Example],
) -> Result<BTreeMap<String, Vec<Example>>, HoldoutError> {
    let mut out: BTreeMap<String, Vec<Example>> = BTreeMap::new();
    for e in withheld {
        let name = spec.subset_of(e).ok_or(HoldoutError::Unclassified(e.id))?;
        out.entry(name).or_default().push(e.clone());
    }
    Ok(out)
}

/// Trained antecedent contexts tracked alongside the withheld ones in E3:
/// the reflexive sentences of the next `count` names of the withheld gender.
pub fn reference_contexts(
    spec: &HoldoutSpec,
    dataset: &Dataset,
    count: usize,
) -> BTreeMap<String, Vec<Example>> {
    let mut out = BTreeMap::new();
    if spec.experiment != ExperimentId::E3 {
        return out;
    }
    let trained = dataset
        .lexicon
        .names_of(spec.withheld_gender)
        .iter()
        .filter(|n| !spec.withheld_names.contains(n))
        .take(count);
    for name in trained {
        let ctx: Vec<Example> = dataset
            .examples
            .iter()
            .filter(|e| e.form == Form::Reflexive && &e.subject == name)
            .cloned()
            .collect();
        out.insert(format!("refl-{}", entity_symbol(name)), ctx);
    }
    out
}

/// Train/validation/test partition plus the withheld generalization sets.
#[derive(Debug, Clone)]
pub struct DataSplit {
    pub spec: HoldoutSpec,
    pub seed: u64,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    pub generalization: BTreeMap<String, Vec<Example>>,
    /// Evaluation-only contexts drawn from the available pool (never withheld).
    pub reference: BTreeMap<String, Vec<Example>>,
}

/// Seeded 80/10/10 split of the available examples.
///
/// Returns (train, validation, test), each in canonical order.
pub fn split(
    available: &[Example],
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>, Vec<Example>), HoldoutError> {
    let n = available.len();
    if n < 10 {
        return Err(HoldoutError::TooFewExamples(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed, RngStream::Split));
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let pick = |idx: &[usize]| {
        let mut v: Vec<Example> = idx.iter().map(|&i| available[i].clone()).collect();
        v.sort_by_key(|e| e.id);
        v
    };
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

/// Number of trained reference contexts tracked for E3 curves.
pub const REFERENCE_CONTEXTS: usize = 2;

/// Builds the full split for one experiment and seed.
pub fn make_split(spec: &HoldoutSpec, dataset: &Dataset, seed: u64) -> Result<DataSplit, HoldoutError> {
    let withheld = withheld_set(spec, dataset)?;
    let (train, validation, test) = split(&withheld.available, seed)?;
    Ok(DataSplit {
        spec: spec.clone(),
        seed,
        train,
        validation,
        test,
        reference: reference_contexts(spec, dataset, REFERENCE_CONTEXTS),
        generalization: withheld.subsets,
    })
}

/// JSON split manifest: indices into the canonical enumeration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub withheld_names: Vec<String>,
    pub withheld_gender: Gender,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub generalization: Vec<usize>,
    pub generalization_subsets: BTreeMap<String, Vec<usize>>,
}

impl DataSplit {
    pub fn manifest(&self) -> SplitManifest {
        let ids = |v: &[Example]| v.iter().map(|e| e.id).collect::<Vec<_>>();
        let mut generalization: Vec<usize> =
            self.generalization.values().flat_map(|v| ids(v)).collect();
        generalization.sort_unstable();
        SplitManifest {
            experiment: self.spec.experiment,
            seed: self.seed,
            withheld_names: self.spec.withheld_names.clone(),
            withheld_gender: self.spec.withheld_gender,
            train: ids(&self.train),
            validation: ids(&self.validation),
            test: ids(&self.test),
            generalization,
            generalization_subsets: self
                .generalization
                .iter()
                .map(|(k, v)| (k.clone(), ids(v)))
                .collect(),
        }
    }

    pub fn generalization_examples(&self) -> impl Iterator<Item = &Example> {
        self.generalization.values().flatten()
    }
}
