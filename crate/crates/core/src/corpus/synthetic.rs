//! Seeded synthetic corpora with known ground truth.
//!
//! Each abstract carries a unique `(study ref N)` marker. The generated
//! sampler script keys on that marker and emits every truth triple the
//! abstract mentions in 35–50 of 50 samples, a distractor triple in at most
//! 27 of 50, and occasional malformed lines, so a correct pipeline recovers
//! exactly the truth set.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use chrono::{Datelike, Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_timeline, count_words, AbstractRecord, CorpusError, DailyTimeline, FIRST_YEAR, LAST_YEAR, MAX_WORDS};
use crate::backends::mock::{seeded_rng, DictionaryEntry, SamplerRule, ScheduledLine, ScriptedSampler};
use crate::backends::DEFAULT_SAMPLES;
use crate::schema::{EntityType, RelationType};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    pub n_entities: usize,
    pub n_truth_triples: usize,
    pub n_abstracts: usize,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl SynthParams {
    pub fn new(seed: u64, n_entities: usize, n_truth_triples: usize, n_abstracts: usize) -> Self {
        SynthParams {
            seed,
            n_entities,
            n_truth_triples,
            n_abstracts,
            start: NaiveDate::from_ymd_opt(1990, 1, 1).expect("valid date"),
            end: NaiveDate::from_ymd_opt(2020, 12, 31).expect("valid date"),
        }
    }

    fn check(&self) -> Result<(), CorpusError> {
        let fail = |m: String| Err(CorpusError::Infeasible(m));
        if self.n_entities < 2 || self.n_truth_triples == 0 || self.n_abstracts == 0 {
            return fail(format!(
                "need at least 2 entities, 1 truth triple and 1 abstract (got {}, {}, {})",
                self.n_entities, self.n_truth_triples, self.n_abstracts
            ));
        }
        let pairs = self.n_entities * (self.n_entities - 1) / 2;
        if self.n_truth_triples > pairs {
            return fail(format!("{} truth triples exceed the {pairs} distinct entity pairs", self.n_truth_triples));
        }
        if self.start > self.end {
            return fail(format!("date range {}..{} is empty", self.start, self.end));
        }
        if self.start.year() < FIRST_YEAR || self.end.year() > LAST_YEAR {
            return fail(format!("date range must lie within {FIRST_YEAR}..={LAST_YEAR}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticEntity {
    pub name: String,
    pub alias: String,
    pub entity_type: EntityType,
    pub identifier: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TruthTriple {
    pub head: String,
    pub relation: RelationType,
    pub tail: String,
    pub pubmed_ids: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SyntheticGroundTruth {
    pub triples: Vec<TruthTriple>,
}

impl SyntheticGroundTruth {
    pub fn contains(&self, head: &str, relation: RelationType, tail: &str) -> bool {
        self.triples.iter().any(|t| t.head == head && t.relation == relation && t.tail == tail)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.triples {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, CorpusError> {
        let mut triples = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            triples.push(
                serde_json::from_str(&line).map_err(|e| CorpusError::Line { line: i + 1, reason: e.to_string() })?,
            );
        }
        Ok(SyntheticGroundTruth { triples })
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub timeline: DailyTimeline,
    pub truth: SyntheticGroundTruth,
    pub entities: Vec<SyntheticEntity>,
    pub sampler_rules: Vec<SamplerRule>,
}

impl SyntheticCorpus {
    pub fn dictionary(&self) -> Vec<DictionaryEntry> {
        self.entities
            .iter()
            .flat_map(|e| {
                [
                    DictionaryEntry::new(&e.name, e.entity_type, &e.identifier),
                    DictionaryEntry::new(&e.alias, e.entity_type, &e.identifier),
                ]
            })
            .collect()
    }

    pub fn sampler(&self, seed: u64) -> ScriptedSampler {
        ScriptedSampler::new(self.sampler_rules.clone(), seed)
    }

    pub fn write_dictionary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in self.dictionary() {
            serde_json::to_writer(&mut w, &e)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn write_sampler_script<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.sampler_rules {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

pub fn study_marker(pubmed_id: u64) -> String {
    format!("(study ref {pubmed_id})")
}

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ven", "tor", "sa", "ri", "dex", "pra", "nu", "zel", "qui", "bor", "fen", "ta", "mo", "xil",
    "gra", "vo", "lun", "pe", "ska", "dri", "hol",
];

const FILLER: &[&str] = &[
    "Participants were recruited from three regional clinics over a two year period.",
    "Baseline characteristics were balanced across the study arms.",
    "Samples were processed within four hours of collection and stored at low temperature.",
    "Statistical analysis used mixed effects models adjusted for age and sex.",
    "Sensitivity analyses excluding early dropouts gave consistent estimates.",
    "The protocol was approved by the institutional review board.",
    "Follow up visits were scheduled at six and twelve months.",
    "Measurements were performed in duplicate by blinded technicians.",
    "Missing data were handled by multiple imputation under a missing at random assumption.",
    "These findings warrant confirmation in larger prospective cohorts.",
    "Limitations include the observational design and modest sample size.",
    "Secondary outcomes included quality of life scores and hospital admissions.",
    "Laboratory assays were calibrated against certified reference material.",
    "Adverse events were mild and resolved without intervention.",
    "The results extend earlier reports from smaller pilot studies.",
    "Dose response relationships were examined across predefined strata.",
];

fn verb_phrase(r: RelationType) -> &'static str {
    match r {
        RelationType::Associate => "was associated with",
        RelationType::NegativeCorrelate => "was inversely correlated with",
        RelationType::PositiveCorrelate => "was positively correlated with",
        RelationType::Compare => "was compared with",
        RelationType::Cotreat => "was co-administered with",
        RelationType::Interact => "was shown to interact with",
        RelationType::DrugInteract => "showed a drug interaction with",
        RelationType::Cause => "was found to cause",
        RelationType::Inhibit => "inhibited",
        RelationType::Treat => "was an effective treatment for",
        RelationType::Stimulate => "stimulated",
        RelationType::Prevent => "prevented",
    }
}

fn pseudo_word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    (0..syllables).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn make_entities(rng: &mut ChaCha8Rng, n: usize) -> Vec<SyntheticEntity> {
    const WEIGHTED: &[EntityType] = &[
        EntityType::Gene,
        EntityType::Gene,
        EntityType::Gene,
        EntityType::Chemical,
        EntityType::Chemical,
        EntityType::Chemical,
        EntityType::Disease,
        EntityType::Disease,
        EntityType::Disease,
        EntityType::Variant,
        EntityType::Species,
        EntityType::CellLine,
    ];
    let mut used: HashSet<String> = HashSet::new();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let ty = *WEIGHTED.choose(rng).expect("non-empty");
        // Single-token, globally unique surface forms keep dictionary matches unambiguous.
        let (name, alias) = loop {
            let syllables = 2 + rng.gen_range(0..2);
            let stem = pseudo_word(rng, syllables);
            let (name, alias) = match ty {
                EntityType::Gene => (format!("{}{}", stem.to_uppercase(), i), format!("{stem}in{i}")),
                EntityType::Chemical => (format!("{}mab", capitalize(&stem)), format!("{}x{}", &stem[..2], i)),
                EntityType::Disease => (format!("{}itis", capitalize(&stem)), format!("{stem}osis{i}")),
                EntityType::Variant => (format!("rs{}", 100_000 + i), format!("{stem}var{i}")),
                EntityType::Species => (format!("{}ella", capitalize(&stem)), format!("{stem}sp{i}")),
                EntityType::CellLine => (format!("{}{}C", stem.to_uppercase(), i), format!("{stem}cells{i}")),
            };
            if used.insert(name.to_lowercase()) {
                if used.insert(alias.to_lowercase()) {
                    break (name, alias);
                }
                used.remove(&name.to_lowercase());
            }
        };
        let identifier = match ty {
            EntityType::Gene => format!("{}", 1000 + i),
            EntityType::Chemical | EntityType::Disease => format!("D{:06}", 100_000 + i),
            EntityType::Variant => name.clone(),
            EntityType::Species => format!("{}", 90_000 + i),
            EntityType::CellLine => format!("CVCL_{:04}", i),
        };
        out.push(SyntheticEntity { name, alias, entity_type: ty, identifier });
    }
    out
}

/// A relation valid for the pair, oriented (head, tail) and canonicalized.
fn pick_relation(rng: &mut ChaCha8Rng, a: &SyntheticEntity, b: &SyntheticEntity) -> (RelationType, usize, usize) {
    let mut options: Vec<(RelationType, bool)> = Vec::new();
    for r in RelationType::ALL {
        if r.allows(a.entity_type, b.entity_type) {
            options.push((r, false));
        }
        if !r.is_bidirectional() && r.allows(b.entity_type, a.entity_type) {
            options.push((r, true));
        }
    }
    let (r, swap) = *options.choose(rng).expect("Associate admits every pair");
    let (mut h, mut t) = if swap { (1, 0) } else { (0, 1) };
    let key = |e: &SyntheticEntity| (e.entity_type, e.identifier.clone());
    let ends = [a, b];
    if r.is_bidirectional() && key(ends[t]) < key(ends[h]) {
        std::mem::swap(&mut h, &mut t);
    }
    (r, h, t)
}

/// Fields alternate between identifiers and the surface form used in the text.
fn triple_line(rng: &mut ChaCha8Rng, h: (&str, &str), r: RelationType, t: (&str, &str)) -> String {
    let hf = if rng.gen_bool(0.5) { h.0 } else { h.1 };
    let tf = if rng.gen_bool(0.5) { t.0 } else { t.1 };
    format!("({hf} | {} | {tf})", r.name())
}

struct Mention {
    head: usize,
    relation: RelationType,
    tail: usize,
}

pub fn generate_synthetic_corpus(params: &SynthParams) -> Result<SyntheticCorpus, CorpusError> {
    params.check()?;
    let mut rng = seeded_rng(&[b"synthetic-corpus", &params.seed.to_le_bytes()]);
    let entities = make_entities(&mut rng, params.n_entities);

    let mut pairs: Vec<(usize, usize)> =
        (0..entities.len()).flat_map(|i| (i + 1..entities.len()).map(move |j| (i, j))).collect();
    pairs.shuffle(&mut rng);
    let truth_pairs: BTreeSet<(usize, usize)> = pairs[..params.n_truth_triples].iter().copied().collect();
    let truth: Vec<Mention> = pairs[..params.n_truth_triples]
        .iter()
        .map(|&(i, j)| {
            let (relation, h, t) = pick_relation(&mut rng, &entities[i], &entities[j]);
            let ends = [i, j];
            Mention { head: ends[h], relation, tail: ends[t] }
        })
        .collect();

    let n_days = (params.end - params.start).num_days();
    let mut support: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    let mut records = Vec::with_capacity(params.n_abstracts);
    let mut rules = Vec::with_capacity(params.n_abstracts);
    for j in 0..params.n_abstracts {
        let pubmed_id = 1_000_000 + 10 * j as u64 + rng.gen_range(0..10);
        let date = params.start + Duration::days(rng.gen_range(0..=n_days));

        let mut mentioned: BTreeSet<usize> = (0..truth.len()).filter(|i| i % params.n_abstracts == j).collect();
        mentioned.insert(j % truth.len());
        if rng.gen_bool(0.3) {
            mentioned.insert(rng.gen_range(0..truth.len()));
        }

        let marker = study_marker(pubmed_id);
        let mut sentences = vec![format!("Background {marker}.")];
        let mut lines = Vec::new();
        let mut present: BTreeSet<usize> = BTreeSet::new();
        for &ti in &mentioned {
            let m = &truth[ti];
            let (h, t) = (&entities[m.head], &entities[m.tail]);
            let hname = if rng.gen_bool(0.3) { &h.alias } else { &h.name };
            sentences.push(format!(
                "In a cohort of {} patients {hname} {} {}.",
                rng.gen_range(20..900),
                verb_phrase(m.relation),
                t.name
            ));
            let line = triple_line(&mut rng, (&h.identifier, hname), m.relation, (&t.identifier, &t.name));
            lines.push(ScheduledLine { line, count: rng.gen_range(35..=50) });
            support.entry(ti).or_default().push(pubmed_id);
            present.extend([m.head, m.tail]);
        }

        // A bystander entity, and a low-frequency distractor over a non-truth pair.
        let bystander = rng.gen_range(0..entities.len());
        sentences.push(format!("Levels of {} were also recorded.", entities[bystander].name));
        present.insert(bystander);
        let present: Vec<usize> = present.into_iter().collect();
        let candidates: Vec<(usize, usize)> = present
            .iter()
            .flat_map(|&a| present.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
            .filter(|p| !truth_pairs.contains(p))
            .collect();
        if let Some(&(a, b)) = candidates.choose(&mut rng) {
            let (relation, h, t) = pick_relation(&mut rng, &entities[a], &entities[b]);
            let ends = [a, b];
            let (h, t) = (&entities[ends[h]], &entities[ends[t]]);
            lines.push(ScheduledLine {
                line: triple_line(&mut rng, (&h.identifier, &h.identifier), relation, (&t.identifier, &t.identifier)),
                count: rng.gen_range(5..=27),
            });
        }
        if rng.gen_bool(0.5) {
            let e = &entities[present[0]];
            lines.push(ScheduledLine { line: format!("({} | Treat", e.name), count: rng.gen_range(1..=10) });
        }
        lines.push(ScheduledLine { line: "Extracted triples:".into(), count: rng.gen_range(0..=50) });

        let target = rng.gen_range(130..=240);
        let mut filler = FILLER.to_vec();
        filler.shuffle(&mut rng);
        let mut k = 0;
        while count_words(&sentences.join(" ")) < target {
            let candidate = filler[k % filler.len()];
            if count_words(&sentences.join(" ")) + count_words(candidate) > MAX_WORDS {
                break;
            }
            sentences.insert(1 + rng.gen_range(0..sentences.len()), candidate.to_string());
            k += 1;
        }
        let text = sentences.join(" ");
        records.push(AbstractRecord::new(pubmed_id, date, text)?);
        rules.push(SamplerRule { needle: marker, n_samples: DEFAULT_SAMPLES, lines });
    }

    let mut truth_triples: Vec<TruthTriple> = truth
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut ids = support.remove(&i).unwrap_or_default();
            ids.sort_unstable();
            TruthTriple {
                head: entities[m.head].identifier.clone(),
                relation: m.relation,
                tail: entities[m.tail].identifier.clone(),
                pubmed_ids: ids,
            }
        })
        .collect();
    truth_triples.sort();
    Ok(SyntheticCorpus {
        timeline: build_timeline(records)?,
        truth: SyntheticGroundTruth { triples: truth_triples },
        entities,
        sampler_rules: rules,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{passes_length_filter, passes_year_filter, write_records};

    fn serialize(c: &SyntheticCorpus) -> Vec<u8> {
        let mut out = Vec::new();
        write_records(&mut out, c.timeline.records()).unwrap();
        c.truth.write_jsonl(&mut out).unwrap();
        c.write_sampler_script(&mut out).unwrap();
        out
    }

    #[test]
    fn deterministic_for_seed() {
        let p = SynthParams::new(7, 30, 10, 30);
        assert_eq!(serialize(&generate_synthetic_corpus(&p).unwrap()), serialize(&generate_synthetic_corpus(&p).unwrap()));
        let q = SynthParams { seed: 8, ..p };
        assert_ne!(serialize(&generate_synthetic_corpus(&p).unwrap()), serialize(&generate_synthetic_corpus(&q).unwrap()));
    }

    #[test]
    fn coverage_and_filters() {
        let c = generate_synthetic_corpus(&SynthParams::new(3, 30, 10, 30)).unwrap();
        let ids: BTreeSet<u64> = c.timeline.records().map(|r| r.pubmed_id()).collect();
        assert_eq!(ids.len(), 30);
        assert_eq!(c.truth.triples.len(), 10);
        for t in &c.truth.triples {
            assert!(!t.pubmed_ids.is_empty());
            assert!(t.pubmed_ids.iter().all(|id| ids.contains(id)));
        }
        assert!(c.timeline.records().all(|r| passes_length_filter(r) && passes_year_filter(r)));
    }

    #[test]
    fn fewer_abstracts_than_triples_still_covered() {
        let c = generate_synthetic_corpus(&SynthParams::new(1, 12, 20, 4)).unwrap();
        assert!(c.truth.triples.iter().all(|t| !t.pubmed_ids.is_empty()));
        assert!(c.timeline.records().all(passes_length_filter));
    }

    #[test]
    fn truth_is_schema_valid_and_pairwise_unique() {
        let c = generate_synthetic_corpus(&SynthParams::new(11, 40, 60, 50)).unwrap();
        let ty: BTreeMap<&str, EntityType> = c.entities.iter().map(|e| (e.identifier.as_str(), e.entity_type)).collect();
        let mut pairs = BTreeSet::new();
        for t in &c.truth.triples {
            let (h, tl) = (ty[t.head.as_str()], ty[t.tail.as_str()]);
            assert!(t.relation.allows(h, tl));
            if t.relation.is_bidirectional() {
                assert!((h, &t.head) < (tl, &t.tail));
            }
            let pair = if t.head < t.tail { (&t.head, &t.tail) } else { (&t.tail, &t.head) };
            assert!(pairs.insert(pair));
        }
    }

    #[test]
    fn infeasible_parameters_rejected() {
        for p in [
            SynthParams::new(1, 10, 5, 0),
            SynthParams::new(1, 1, 1, 5),
            SynthParams::new(1, 4, 7, 5),
            SynthParams::new(1, 10, 0, 5),
            SynthParams { start: NaiveDate::from_ymd_opt(1970, 1, 1).unwrap(), ..SynthParams::new(1, 10, 5, 5) },
        ] {
            assert!(matches!(generate_synthetic_corpus(&p), Err(CorpusError::Infeasible(_))), "{p:?}");
        }
    }
}
