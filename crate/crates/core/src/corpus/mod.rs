//! Abstract ingestion: quality filters, the chronological daily timeline,
//! line-delimited record I/O, and synthetic corpora with known ground truth.

mod synthetic;

pub use synthetic::{
    generate_synthetic_corpus, SynthParams, SyntheticCorpus, SyntheticEntity, SyntheticGroundTruth,
    TruthTriple,
};

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_WORDS: usize = 100;
pub const MAX_WORDS: usize = 300;
pub const FIRST_YEAR: i32 = 1975;
pub const LAST_YEAR: i32 = 2023;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate pubmed id {0}")]
    DuplicateId(u64),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("infeasible synthetic parameters: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One dated, identified abstract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RecordLine", into = "RecordLine")]
pub struct AbstractRecord {
    pubmed_id: u64,
    date: NaiveDate,
    text: String,
    word_count: usize,
}

impl AbstractRecord {
    pub fn new(pubmed_id: u64, date: NaiveDate, text: impl Into<String>) -> Result<Self, CorpusError> {
        let text = text.into();
        if pubmed_id == 0 {
            return Err(CorpusError::InvalidRecord("pubmed_id must be positive".into()));
        }
        if text.trim().is_empty() {
            return Err(CorpusError::InvalidRecord(format!("record {pubmed_id} has empty text")));
        }
        let word_count = count_words(&text);
        Ok(AbstractRecord { pubmed_id, date, text, word_count })
    }

    pub fn pubmed_id(&self) -> u64 {
        self.pubmed_id
    }

    pub fn date(&self) -> NaiveDate {
        self.date
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    pubmed_id: u64,
    date: String,
    text: String,
}

impl TryFrom<RecordLine> for AbstractRecord {
    type Error = CorpusError;

    fn try_from(line: RecordLine) -> Result<Self, Self::Error> {
        let date = parse_record_date(&line.date)?;
        AbstractRecord::new(line.pubmed_id, date, line.text)
    }
}

impl From<AbstractRecord> for RecordLine {
    fn from(r: AbstractRecord) -> Self {
        RecordLine { pubmed_id: r.pubmed_id, date: r.date.format("%Y-%m-%d").to_string(), text: r.text }
    }
}

/// Parses `YYYY-MM-DD`. Partial dates (`YYYY-MM`, `YYYY`) are normalized to
/// the first day of the month or year.
pub fn parse_record_date(s: &str) -> Result<NaiveDate, CorpusError> {
    let bad = || CorpusError::InvalidRecord(format!("unparseable date `{s}`"));
    let parts: Vec<&str> = s.trim().split('-').collect();
    let num = |p: &str| p.parse::<u32>().map_err(|_| bad());
    let (year, month, day) = match parts.as_slice() {
        [y] => (y.parse::<i32>().map_err(|_| bad())?, 1, 1),
        [y, m] => (y.parse::<i32>().map_err(|_| bad())?, num(m)?, 1),
        [y, m, d] => (y.parse::<i32>().map_err(|_| bad())?, num(m)?, num(d)?),
        _ => return Err(bad()),
    };
    NaiveDate::from_ymd_opt(year, month, day).ok_or_else(bad)
}

/// Number of maximal whitespace-delimited tokens.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn passes_length_filter(record: &AbstractRecord) -> bool {
    (MIN_WORDS..=MAX_WORDS).contains(&record.word_count)
}

pub fn passes_year_filter(record: &AbstractRecord) -> bool {
    (FIRST_YEAR..=LAST_YEAR).contains(&record.date.year())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropReason {
    Length,
    Year,
}

/// First failing filter, year checked before length.
pub fn filter_verdict(record: &AbstractRecord) -> Option<DropReason> {
    if !passes_year_filter(record) {
        Some(DropReason::Year)
    } else if !passes_length_filter(record) {
        Some(DropReason::Length)
    } else {
        None
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub retained: usize,
    pub dropped: BTreeMap<DropReason, usize>,
}

pub fn apply_filters(records: Vec<AbstractRecord>) -> (Vec<AbstractRecord>, FilterReport) {
    let mut report = FilterReport::default();
    let kept = records
        .into_iter()
        .filter(|r| match filter_verdict(r) {
            Some(reason) => {
                *report.dropped.entry(reason).or_default() += 1;
                false
            }
            None => true,
        })
        .collect::<Vec<_>>();
    report.retained = kept.len();
    (kept, report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Day {
    pub date: NaiveDate,
    pub records: Vec<AbstractRecord>,
}

/// Records grouped by day; days strictly increasing, records within a day
/// strictly increasing by pubmed id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DailyTimeline {
    days: Vec<Day>,
}

impl DailyTimeline {
    pub fn days(&self) -> &[Day] {
        &self.days
    }

    pub fn len(&self) -> usize {
        self.days.iter().map(|d| d.records.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// Records in (date, pubmed id) order.
    pub fn records(&self) -> impl Iterator<Item = &AbstractRecord> + '_ {
        self.days.iter().flat_map(|d| d.records.iter())
    }

    pub fn into_records(self) -> Vec<AbstractRecord> {
        self.days.into_iter().flat_map(|d| d.records).collect()
    }
}

pub fn build_timeline(records: impl IntoIterator<Item = AbstractRecord>) -> Result<DailyTimeline, CorpusError> {
    let mut records: Vec<AbstractRecord> = records.into_iter().collect();
    let mut seen = HashSet::with_capacity(records.len());
    for r in &records {
        if !seen.insert(r.pubmed_id) {
            return Err(CorpusError::DuplicateId(r.pubmed_id));
        }
    }
    records.sort_by_key(|r| (r.date, r.pubmed_id));
    let mut days: Vec<Day> = Vec::new();
    for r in records {
        match days.last_mut() {
            Some(day) if day.date == r.date => day.records.push(r),
            _ => days.push(Day { date: r.date, records: vec![r] }),
        }
    }
    Ok(DailyTimeline { days })
}

/// Reads line-delimited records. Malformed lines are returned alongside the
/// parsed records rather than aborting the read.
pub fn read_records<R: BufRead>(reader: R) -> Result<(Vec<AbstractRecord>, Vec<CorpusError>), CorpusError> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<AbstractRecord>(&line) {
            Ok(r) => records.push(r),
            Err(e) => errors.push(CorpusError::Line { line: idx + 1, reason: e.to_string() }),
        }
    }
    Ok((records, errors))
}

/// Strict variant: any malformed line is an error.
pub fn read_timeline<R: BufRead>(reader: R) -> Result<DailyTimeline, CorpusError> {
    let (records, mut errors) = read_records(reader)?;
    if !errors.is_empty() {
        return Err(errors.swap_remove(0));
    }
    build_timeline(records)
}

pub fn write_records<'a, W: Write>(
    mut writer: W,
    records: impl IntoIterator<Item = &'a AbstractRecord>,
) -> Result<(), CorpusError> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(|e| CorpusError::InvalidRecord(e.to_string()))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
