//! Entity and relation vocabulary shared by every stage of the pipeline.
//!
//! Six entity categories, each normalized against one reference terminology,
//! and twelve relation types split into seven bidirectional and five
//! unidirectional relations. Every relation carries the entity-type
//! combinations it may connect; triples outside those combinations are
//! rejected at parse time.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("unknown entity type `{0}`")]
    UnknownEntityType(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
}

/// Biomedical entity category. Declaration order is the canonical sort order
/// used when orienting bidirectional triples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityType {
    Gene,
    Disease,
    Chemical,
    Variant,
    Species,
    CellLine,
}

impl EntityType {
    pub const ALL: [EntityType; 6] = [
        EntityType::Gene,
        EntityType::Disease,
        EntityType::Chemical,
        EntityType::Variant,
        EntityType::Species,
        EntityType::CellLine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Gene => "Gene",
            EntityType::Disease => "Disease",
            EntityType::Chemical => "Chemical",
            EntityType::Variant => "Variant",
            EntityType::Species => "Species",
            EntityType::CellLine => "CellLine",
        }
    }

    /// Terminologies an identifier of this type may be scoped to.
    pub fn terminologies(self) -> &'static [&'static str] {
        match self {
            EntityType::Gene => &["NCBI Gene"],
            EntityType::Disease | EntityType::Chemical => &["MeSH"],
            EntityType::Variant => &["dbSNP", "HGNV"],
            EntityType::Species => &["NCBI Taxonomy"],
            EntityType::CellLine => &["Cellosaurus"],
        }
    }

    pub fn default_terminology(self) -> &'static str {
        self.terminologies()[0]
    }

    pub fn accepts_terminology(self, terminology: &str) -> bool {
        self.terminologies().contains(&terminology)
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| SchemaError::UnknownEntityType(s.to_string()))
    }
}

/// Page link for an identifier in its terminology.
pub fn page_link(terminology: &str, identifier: &str) -> String {
    match terminology {
        "NCBI Gene" => format!("https://www.ncbi.nlm.nih.gov/gene/{identifier}"),
        "MeSH" => format!("https://meshb.nlm.nih.gov/record/ui?ui={identifier}"),
        "dbSNP" => format!("https://www.ncbi.nlm.nih.gov/snp/{identifier}"),
        "HGNV" => format!("https://www.ncbi.nlm.nih.gov/clinvar/?term={identifier}"),
        "NCBI Taxonomy" => {
            format!("https://www.ncbi.nlm.nih.gov/Taxonomy/Browser/wwwtax.cgi?id={identifier}")
        }
        "Cellosaurus" => format!("https://www.cellosaurus.org/{identifier}"),
        other => format!("urn:{}:{identifier}", other.replace(' ', "_").to_lowercase()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Directionality {
    Bidirectional,
    Unidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationType {
    Associate,
    #[serde(rename = "Negative_Correlate")]
    NegativeCorrelate,
    #[serde(rename = "Positive_Correlate")]
    PositiveCorrelate,
    Compare,
    Cotreat,
    Interact,
    #[serde(rename = "Drug_Interact")]
    DrugInteract,
    Cause,
    Inhibit,
    Treat,
    Stimulate,
    Prevent,
}

use EntityType::{CellLine, Chemical, Disease, Gene, Species, Variant};

const MOLECULAR: &[EntityType] = &[Gene, Chemical, Variant];
const CORRELATABLE: &[EntityType] = &[Gene, Disease, Chemical, Variant];

impl RelationType {
    pub const ALL: [RelationType; 12] = [
        RelationType::Associate,
        RelationType::NegativeCorrelate,
        RelationType::PositiveCorrelate,
        RelationType::Compare,
        RelationType::Cotreat,
        RelationType::Interact,
        RelationType::DrugInteract,
        RelationType::Cause,
        RelationType::Inhibit,
        RelationType::Treat,
        RelationType::Stimulate,
        RelationType::Prevent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelationType::Associate => "Associate",
            RelationType::NegativeCorrelate => "Negative_Correlate",
            RelationType::PositiveCorrelate => "Positive_Correlate",
            RelationType::Compare => "Compare",
            RelationType::Cotreat => "Cotreat",
            RelationType::Interact => "Interact",
            RelationType::DrugInteract => "Drug_Interact",
            RelationType::Cause => "Cause",
            RelationType::Inhibit => "Inhibit",
            RelationType::Treat => "Treat",
            RelationType::Stimulate => "Stimulate",
            RelationType::Prevent => "Prevent",
        }
    }

    pub fn directionality(self) -> Directionality {
        match self {
            RelationType::Associate
            | RelationType::NegativeCorrelate
            | RelationType::PositiveCorrelate
            | RelationType::Compare
            | RelationType::Cotreat
            | RelationType::Interact
            | RelationType::DrugInteract => Directionality::Bidirectional,
            RelationType::Cause
            | RelationType::Inhibit
            | RelationType::Treat
            | RelationType::Stimulate
            | RelationType::Prevent => Directionality::Unidirectional,
        }
    }

    pub fn is_bidirectional(self) -> bool {
        self.directionality() == Directionality::Bidirectional
    }

    /// Short definition used when rendering the relation schema into prompts.
    pub fn description(self) -> &'static str {
        match self {
            RelationType::Associate => "a general association without a specified direction of effect",
            RelationType::NegativeCorrelate => "an increase in one entity accompanies a decrease in the other",
            RelationType::PositiveCorrelate => "both entities increase or decrease together",
            RelationType::Compare => "two chemicals are compared for effect or efficacy",
            RelationType::Cotreat => "two chemicals are administered together",
            RelationType::Interact => "a physical or molecular interaction such as binding",
            RelationType::DrugInteract => "a pharmacological interaction between two drugs",
            RelationType::Cause => "the head entity causes the tail condition",
            RelationType::Inhibit => "the head entity suppresses the tail entity",
            RelationType::Treat => "the head chemical treats the tail disease",
            RelationType::Stimulate => "the head entity activates or up-regulates the tail entity",
            RelationType::Prevent => "the head chemical prevents the tail disease",
        }
    }

    /// Permitted (head type, tail type) combinations. Bidirectional relations
    /// accept either orientation of a listed pair.
    pub fn allowed_type_pairs(self) -> Vec<(EntityType, EntityType)> {
        fn cross(heads: &[EntityType], tails: &[EntityType]) -> Vec<(EntityType, EntityType)> {
            heads
                .iter()
                .flat_map(|h| tails.iter().map(move |t| (*h, *t)))
                .collect()
        }
        match self {
            RelationType::Associate => cross(&EntityType::ALL, &EntityType::ALL),
            RelationType::NegativeCorrelate | RelationType::PositiveCorrelate => {
                cross(CORRELATABLE, CORRELATABLE)
            }
            RelationType::Compare | RelationType::Cotreat | RelationType::DrugInteract => {
                vec![(Chemical, Chemical)]
            }
            RelationType::Interact => cross(MOLECULAR, MOLECULAR),
            RelationType::Cause => cross(&[Gene, Chemical, Variant, Species], &[Disease]),
            RelationType::Inhibit | RelationType::Stimulate => {
                cross(&[Gene, Chemical], &[Gene, Disease, Species, CellLine])
            }
            RelationType::Treat | RelationType::Prevent => vec![(Chemical, Disease)],
        }
    }

    pub fn allows(self, head: EntityType, tail: EntityType) -> bool {
        let pairs = self.allowed_type_pairs();
        pairs.contains(&(head, tail)) || (self.is_bidirectional() && pairs.contains(&(tail, head)))
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RelationType {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RelationType::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| SchemaError::UnknownRelation(s.to_string()))
    }
}
