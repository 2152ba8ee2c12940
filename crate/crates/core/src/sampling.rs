//! Negative example generation, stratified splitting and hit-ratio case
//! construction.
//!
//! Every operation is a pure function of its inputs and seed.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Interaction, InteractionSet};
use crate::error::{Error, Result};
use crate::notes_nlp::SubjectSymptomTable;

/// Rejection sampling gives up after this many attempts per requested negative.
pub const REJECTION_CAP: usize = 1000;

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Number of negatives generated per positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct NegRatio(usize);

impl NegRatio {
    pub const TEN: NegRatio = NegRatio(10);
    pub const FOUR: NegRatio = NegRatio(4);
    pub const TWO: NegRatio = NegRatio(2);

    pub fn new(negatives_per_positive: usize) -> Result<Self> {
        if negatives_per_positive == 0 {
            return Err(Error::Config("negative ratio must be at least 1".into()));
        }
        Ok(NegRatio(negatives_per_positive))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl Default for NegRatio {
    fn default() -> Self {
        NegRatio::FOUR
    }
}

impl TryFrom<usize> for NegRatio {
    type Error = Error;
    fn try_from(v: usize) -> Result<Self> {
        NegRatio::new(v)
    }
}

impl From<NegRatio> for usize {
    fn from(r: NegRatio) -> usize {
        r.0
    }
}

impl FromStr for NegRatio {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let n: usize = s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("invalid negative ratio {s:?}")))?;
        NegRatio::new(n)
    }
}

impl fmt::Display for NegRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "1:{}", self.0)
    }
}

fn draw_negatives(
    rng: &mut ChaCha8Rng,
    subjects: &[usize],
    n_codes: usize,
    positives: &HashSet<(usize, usize)>,
    target: usize,
) -> Result<Vec<(usize, usize)>> {
    let cap = REJECTION_CAP.saturating_mul(target);
    let mut out = Vec::with_capacity(target);
    let mut attempts = 0;
    while out.len() < target {
        if attempts >= cap {
            return Err(Error::InsufficientNegativeSpace(format!(
                "found {} of {target} negatives in {cap} attempts",
                out.len()
            )));
        }
        attempts += 1;
        let s = subjects[rng.gen_range(0..subjects.len())];
        let c = rng.gen_range(0..n_codes);
        if !positives.contains(&(s, c)) {
            out.push((s, c));
        }
    }
    Ok(out)
}

/// Returns the positives followed by `ratio × |positives|` uniformly sampled
/// (subject, code) pairs absent from the positive set. Negatives may repeat.
pub fn generate_negative_pairs(
    positives: &InteractionSet,
    ratio: NegRatio,
    seed: u64,
) -> Result<InteractionSet> {
    let pos: Vec<Interaction> = positives
        .positives()
        .map(|r| Interaction::positive(r.subject, r.code))
        .collect();
    if pos.is_empty() {
        return Err(Error::EmptyInput("sampling: negative pairs"));
    }
    let universe = positives.n_subjects() * positives.n_codes();
    if universe <= pos.len() {
        return Err(Error::InsufficientNegativeSpace(format!(
            "{} positives fill the {universe}-pair universe",
            pos.len()
        )));
    }
    let pair_set = positives.positive_pairs();
    let subjects: Vec<usize> = (0..positives.n_subjects()).collect();
    let mut rng = rng(seed);
    let negatives = draw_negatives(
        &mut rng,
        &subjects,
        positives.n_codes(),
        &pair_set,
        ratio.get() * pos.len(),
    )?;
    let mut records = pos;
    records.extend(
        negatives
            .into_iter()
            .map(|(s, c)| Interaction::negative(s, c)),
    );
    InteractionSet::new(
        records,
        positives.n_subjects(),
        positives.n_codes(),
        positives.n_symptoms(),
    )
}

/// A hybrid dataset and how much of the positive set survived.
#[derive(Debug, Clone)]
pub struct TripleDataset {
    pub data: InteractionSet,
    /// Subjects with positives but no extracted terms.
    pub dropped_subjects: usize,
    pub dropped_positives: usize,
}

/// Builds (subject, code, symptom) triples.
///
/// Positives of subjects without note-derived terms are dropped. Each kept
/// positive carries one of its subject's terms chosen uniformly. Negatives
/// draw a kept subject uniformly, a code the subject does not hold, and one of
/// that subject's own terms.
pub fn generate_negative_triples(
    positives: &InteractionSet,
    symptoms: &SubjectSymptomTable,
    ratio: NegRatio,
    seed: u64,
) -> Result<TripleDataset> {
    let all: Vec<&Interaction> = positives.positives().collect();
    if all.is_empty() {
        return Err(Error::EmptyInput("sampling: negative triples"));
    }
    let kept: Vec<&Interaction> = all
        .iter()
        .copied()
        .filter(|r| symptoms.contains(r.subject))
        .collect();
    if kept.is_empty() {
        return Err(Error::NoSymptoms);
    }
    let subjects: Vec<usize> = kept
        .iter()
        .map(|r| r.subject)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let all_subjects: HashSet<usize> = all.iter().map(|r| r.subject).collect();
    let dropped_subjects = all_subjects.len() - subjects.len();
    let universe = subjects.len() * positives.n_codes();
    if universe <= kept.len() {
        return Err(Error::InsufficientNegativeSpace(format!(
            "{} positives fill the {universe}-pair universe",
            kept.len()
        )));
    }

    let mut rng = rng(seed);
    let pick = |rng: &mut ChaCha8Rng, s: usize| -> usize {
        let list = symptoms.get(s).expect("subject filtered to the table");
        list[rng.gen_range(0..list.len())]
    };
    let mut records: Vec<Interaction> = Vec::with_capacity(kept.len() * (ratio.get() + 1));
    for r in &kept {
        let m = pick(&mut rng, r.subject);
        records.push(Interaction::positive(r.subject, r.code).with_symptom(m));
    }
    let pair_set = positives.positive_pairs();
    let negatives = draw_negatives(
        &mut rng,
        &subjects,
        positives.n_codes(),
        &pair_set,
        ratio.get() * kept.len(),
    )?;
    for (s, c) in negatives {
        let m = pick(&mut rng, s);
        records.push(Interaction::negative(s, c).with_symptom(m));
    }
    let data = InteractionSet::new(
        records,
        positives.n_subjects(),
        positives.n_codes(),
        symptoms.n_symptoms(),
    )?;
    Ok(TripleDataset {
        data,
        dropped_subjects,
        dropped_positives: all.len() - kept.len(),
    })
}

/// Train/validation/test fractions and the shuffling seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, validation: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = SplitSpec {
            train,
            validation,
            test,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.fractions();
        if f.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Config(format!(
                "split fractions must be positive, got {f:?}"
            )));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1, got {f:?}"
            )));
        }
        Ok(())
    }

    fn fractions(&self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }
}

/// Largest-remainder apportionment of `total` by real-valued `shares` whose
/// sum is `total`. Ties go to the earlier slot.
fn apportion(total: usize, shares: [f64; 3]) -> [usize; 3] {
    let mut counts = shares.map(|s| s.floor().max(0.0) as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: InteractionSet,
    pub validation: InteractionSet,
    pub test: InteractionSet,
}

/// Stratified, seeded partition into train/validation/test.
///
/// Split sizes follow the fractions by largest remainder, and each split's
/// positive count is within one record of the global positive rate times its
/// size.
pub fn split(data: &InteractionSet, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let n = data.len();
    if n < 10 {
        return Err(Error::Sampling(format!(
            "need at least 10 records to split, got {n}"
        )));
    }
    let sizes = apportion(n, spec.fractions().map(|f| f * n as f64));
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        let name = ["train", "validation", "test"][i];
        return Err(Error::Sampling(format!(
            "{name} split would be empty for {n} records"
        )));
    }
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for (i, r) in data.records().iter().enumerate() {
        if r.label {
            pos.push(i)
        } else {
            neg.push(i)
        }
    }
    let rate = pos.len() as f64 / n as f64;
    let pos_counts = apportion(pos.len(), sizes.map(|s| s as f64 * rate));

    let mut rng = rng(spec.seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let (mut pi, mut ni) = (0, 0);
    let mut parts: Vec<InteractionSet> = Vec::with_capacity(3);
    for (size, n_pos) in sizes.into_iter().zip(pos_counts) {
        let n_neg = size - n_pos;
        let mut idx: Vec<usize> = pos[pi..pi + n_pos]
            .iter()
            .chain(&neg[ni..ni + n_neg])
            .copied()
            .collect();
        pi += n_pos;
        ni += n_neg;
        idx.shuffle(&mut rng);
        parts.push(data.with_records(idx.into_iter().map(|i| data.records()[i]).collect()));
    }
    let test = parts.pop().expect("three parts");
    let validation = parts.pop().expect("three parts");
    let train = parts.pop().expect("three parts");
    Ok(Split {
        train,
        validation,
        test,
    })
}

/// One leave-one-out ranking task: the held-out positive hidden among codes
/// the subject never had.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitRatioCase {
    pub subject: usize,
    pub held_out: usize,
    /// Sorted ascending; includes `held_out`.
    pub candidates: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct HitRatioCases {
    pub cases: Vec<HitRatioCase>,
    /// Subjects with too few non-positive codes to fill a candidate list.
    pub skipped: usize,
}

/// One case per subject in `positives`, holding out one of its positives.
pub fn build_hitratio_cases(
    positives: &InteractionSet,
    n_candidates: usize,
    seed: u64,
) -> Result<HitRatioCases> {
    build_hitratio_cases_from(positives, positives, n_candidates, seed)
}

/// Holds out a positive drawn from `holdout_pool` per subject and fills the
/// remaining candidates with codes absent from `known_positives` for that
/// subject.
///
/// Drawing the held-out item from a test split while excluding every known
/// positive keeps the held-out pair unseen in training and the sampled
/// candidates true negatives.
pub fn build_hitratio_cases_from(
    holdout_pool: &InteractionSet,
    known_positives: &InteractionSet,
    n_candidates: usize,
    seed: u64,
) -> Result<HitRatioCases> {
    let n_codes = known_positives.n_codes();
    if n_candidates == 0 {
        return Err(Error::Sampling("candidate count must be at least 1".into()));
    }
    if n_candidates > n_codes {
        return Err(Error::Sampling(format!(
            "{n_candidates} candidates requested but only {n_codes} codes exist"
        )));
    }
    let mut held: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for r in holdout_pool.positives() {
        held.entry(r.subject).or_default().push(r.code);
    }
    let mut known: BTreeMap<usize, HashSet<usize>> = BTreeMap::new();
    for r in known_positives.positives() {
        known.entry(r.subject).or_default().insert(r.code);
    }

    let mut rng = rng(seed);
    let mut cases = Vec::with_capacity(held.len());
    let mut skipped = 0;
    for (subject, codes) in held {
        let held_out = codes[rng.gen_range(0..codes.len())];
        let owned = known.get(&subject);
        let pool: Vec<usize> = (0..n_codes)
            .filter(|&c| c != held_out && !owned.is_some_and(|o| o.contains(&c)))
            .collect();
        let need = n_candidates - 1;
        if pool.len() < need {
            skipped += 1;
            continue;
        }
        let mut candidates: Vec<usize> = index::sample(&mut rng, pool.len(), need)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        candidates.push(held_out);
        candidates.sort_unstable();
        cases.push(HitRatioCase {
            subject,
            held_out,
            candidates,
        });
    }
    Ok(HitRatioCases { cases, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn positives(pairs: &[(usize, usize)], n_subjects: usize, n_codes: usize) -> InteractionSet {
        InteractionSet::new(
            pairs
                .iter()
                .map(|&(s, c)| Interaction::positive(s, c))
                .collect(),
            n_subjects,
            n_codes,
            0,
        )
        .unwrap()
    }

    fn table(entries: &[(usize, &[usize])], n_symptoms: usize) -> SubjectSymptomTable {
        SubjectSymptomTable::new(
            entries.iter().map(|(s, v)| (*s, v.to_vec())).collect(),
            n_symptoms,
        )
        .unwrap()
    }

    #[test]
    fn pairs_count_and_exclusion() {
        let pos = positives(&[(0, 0), (1, 1), (2, 2)], 3, 4);
        let out = generate_negative_pairs(&pos, NegRatio::TWO, 7).unwrap();
        assert_eq!(out.n_positive(), 3);
        assert_eq!(out.n_negative(), 6);
        let pairs = pos.positive_pairs();
        assert!(out
            .records()
            .iter()
            .filter(|r| !r.label)
            .all(|r| !pairs.contains(&(r.subject, r.code))));
    }

    #[test]
    fn pairs_exhausted_universe() {
        let pos = positives(&[(0, 0), (0, 1), (0, 2)], 1, 3);
        let err = generate_negative_pairs(&pos, NegRatio::TWO, 1).unwrap_err();
        assert!(
            err.to_string().contains("insufficient negative space"),
            "{err}"
        );
    }

    #[test]
    fn pairs_deterministic() {
        let pos = positives(&[(0, 0), (1, 1), (2, 2)], 3, 4);
        let a = generate_negative_pairs(&pos, NegRatio::TEN, 11).unwrap();
        let b = generate_negative_pairs(&pos, NegRatio::TEN, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_negative_pairs(&pos, NegRatio::TEN, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn triples_use_own_symptoms() {
        let pos = positives(&[(0, 0), (1, 1), (2, 1)], 3, 5);
        let t = table(&[(0, &[0, 1]), (1, &[2])], 3);
        let out = generate_negative_triples(&pos, &t, NegRatio::TEN, 3).unwrap();
        assert_eq!(out.dropped_subjects, 1);
        assert_eq!(out.dropped_positives, 1);
        assert_eq!(out.data.n_positive(), 2);
        assert_eq!(out.data.n_negative(), 20);
        for r in out.data.records() {
            let own = t.get(r.subject).unwrap();
            assert!(own.contains(&r.symptom.unwrap()));
            assert_ne!(r.subject, 2);
        }
        let first = out.data.records()[0];
        assert!(first.symptom == Some(0) || first.symptom == Some(1));
        let again = generate_negative_triples(&pos, &t, NegRatio::TEN, 3).unwrap();
        assert_eq!(again.data, out.data);
    }

    #[test]
    fn triples_without_symptoms() {
        let pos = positives(&[(0, 0)], 2, 3);
        let t = table(&[(1, &[0])], 1);
        let err = generate_negative_triples(&pos, &t, NegRatio::TWO, 0).unwrap_err();
        assert!(err.to_string().contains("no symptoms for any subject"));
    }

    fn labelled(n_pos: usize, n_neg: usize) -> InteractionSet {
        let mut recs: Vec<Interaction> = (0..n_pos).map(|i| Interaction::positive(i, 0)).collect();
        recs.extend((0..n_neg).map(|i| Interaction::negative(i, 1)));
        InteractionSet::new(recs, n_pos.max(n_neg), 2, 0).unwrap()
    }

    #[test]
    fn split_sizes_and_strata() {
        let data = labelled(30, 70);
        let s = split(&data, &SplitSpec::default()).unwrap();
        assert_eq!(
            (s.train.len(), s.validation.len(), s.test.len()),
            (80, 10, 10)
        );
        assert_eq!(s.train.n_positive(), 24);
        assert_eq!(s.validation.n_positive(), 3);
        assert_eq!(s.test.n_positive(), 3);
    }

    #[test]
    fn split_disjoint_and_exhaustive() {
        // Unique records so set comparison is exact.
        let recs: Vec<Interaction> = (0..57)
            .map(|i| Interaction {
                subject: i,
                code: 0,
                symptom: None,
                label: i % 3 == 0,
            })
            .collect();
        let data = InteractionSet::new(recs, 57, 1, 0).unwrap();
        let s = split(&data, &SplitSpec::new(0.7, 0.2, 0.1, 9).unwrap()).unwrap();
        let a: HashSet<_> = s.train.records().iter().collect();
        let b: HashSet<_> = s.validation.records().iter().collect();
        let c: HashSet<_> = s.test.records().iter().collect();
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        assert_eq!(a.len() + b.len() + c.len(), 57);
    }

    #[test]
    fn split_errors() {
        assert!(split(&labelled(3, 5), &SplitSpec::default()).is_err());
        assert!(SplitSpec::new(0.5, 0.5, 0.0, 0).is_err());
        assert!(SplitSpec::new(0.5, 0.3, 0.3, 0).is_err());
        let tiny = SplitSpec::new(0.98, 0.01, 0.01, 0).unwrap();
        assert!(split(&labelled(5, 6), &tiny).is_err());
    }

    #[test]
    fn hit_ratio_case_shape() {
        let pos = positives(&[(0, 5)], 1, 200);
        let out = build_hitratio_cases(&pos, 100, 4).unwrap();
        assert_eq!(out.cases.len(), 1);
        let case = &out.cases[0];
        assert_eq!(case.candidates.len(), 100);
        assert!(case.candidates.contains(&5));
        let distinct: HashSet<_> = case.candidates.iter().collect();
        assert_eq!(distinct.len(), 100);
        assert_eq!(out.cases, build_hitratio_cases(&pos, 100, 4).unwrap().cases);
    }

    #[test]
    fn hit_ratio_candidates_exclude_known() {
        let pairs: Vec<(usize, usize)> = (0..60).step_by(2).map(|c| (0, c)).collect();
        let pos = positives(&pairs, 1, 130);
        let case = &build_hitratio_cases(&pos, 100, 0).unwrap().cases[0];
        for &c in &case.candidates {
            assert!(c == case.held_out || c % 2 == 1 || c >= 60);
        }
    }

    #[test]
    fn hit_ratio_skips_and_errors() {
        let pairs: Vec<(usize, usize)> = (0..150).map(|c| (0, c)).chain([(1, 0)]).collect();
        let pos = positives(&pairs, 2, 200);
        let out = build_hitratio_cases(&pos, 100, 0).unwrap();
        assert_eq!(out.skipped, 1);
        assert_eq!(out.cases.len(), 1);
        assert_eq!(out.cases[0].subject, 1);
        assert!(build_hitratio_cases(&pos, 201, 0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn split_strata_within_one(n_pos in 1usize..80, n_neg in 1usize..200, seed in any::<u64>()) {
                prop_assume!(n_pos + n_neg >= 20);
                let data = labelled(n_pos, n_neg);
                let s = split(&data, &SplitSpec::new(0.8, 0.1, 0.1, seed).unwrap()).unwrap();
                let rate = n_pos as f64 / (n_pos + n_neg) as f64;
                let mut total = 0;
                for part in [&s.train, &s.validation, &s.test] {
                    let expect = rate * part.len() as f64;
                    prop_assert!((part.n_positive() as f64 - expect).abs() < 1.0);
                    total += part.len();
                }
                prop_assert_eq!(total, n_pos + n_neg);
                let again = split(&data, &SplitSpec::new(0.8, 0.1, 0.1, seed).unwrap()).unwrap();
                prop_assert_eq!(again.train, s.train);
            }
        }
    }
}
