//! Disease–finding knowledge base: loading, validation, and synthesis.
//!
//! The knowledge base is a closed world of diseases, patient-answerable
//! findings, and weighted links between them. Each link carries an evoking
//! strength (how strongly the finding suggests the disease when present) and
//! a frequency (how often patients with the disease exhibit the finding),
//! both on a 1–5 scale. Findings additionally carry a disease-independent
//! 1–5 import score.
//!
//! The on-disk format is a TOML document (see `KbFile` and the repository
//! README for the grammar). Serialization is deterministic: findings,
//! diseases, and links are sorted by id, so `load_kb(write_kb(kb))` is the
//! identity on valid knowledge bases.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::RangeInclusive;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Current on-disk format version.
pub const KB_FORMAT_VERSION: u32 = 1;

macro_rules! id_type {
    ($name:ident) => {
        #[derive(
            Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
        )]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

id_type!(FindingId);
id_type!(DiseaseId);

/// What kind of patient-answerable item a finding is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    Demographic,
    Predisposing,
    Symptom,
}

impl fmt::Display for FindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FindingKind::Demographic => "demographic",
            FindingKind::Predisposing => "predisposing",
            FindingKind::Symptom => "symptom",
        };
        f.write_str(s)
    }
}

/// A patient-answerable clinical item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub id: FindingId,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub definition: Option<String>,
    /// Disease-independent global importance, 1–5.
    pub import: u8,
    pub kind: FindingKind,
    /// At most one finding per exclusion group may be present in a case.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion_group: Option<String>,
}

/// Weighted disease–finding association.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub evoking_strength: u8,
    pub frequency: u8,
}

/// A disease with its category memberships and finding links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseEntry {
    pub id: DiseaseId,
    pub name: String,
    pub categories: Vec<String>,
    pub links: BTreeMap<FindingId, Link>,
}

/// Immutable after load; safe to share read-only across workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub findings: BTreeMap<FindingId, Finding>,
    pub diseases: BTreeMap<DiseaseId, DiseaseEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported format version {0} (expected {KB_FORMAT_VERSION})")]
    FormatVersion(u32),
    #[error("knowledge base invalid: {}", summarize(.0))]
    Invalid(Vec<Violation>),
    #[error("infeasible parameters: {0}")]
    InfeasibleParameters(String),
}

fn summarize(violations: &[Violation]) -> String {
    let mut s = format!("{} violation(s)", violations.len());
    if let Some(first) = violations.first() {
        s.push_str(&format!("; first: {first}"));
    }
    s
}

/// One invariant violation found during validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Stable rule name, e.g. "dangling-link" or "no-symptom-links".
    pub rule: String,
    /// Id of the offending finding or disease.
    pub entity: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.rule, self.entity, self.detail)
    }
}

fn violation(rule: &str, entity: impl fmt::Display, detail: impl Into<String>) -> Violation {
    Violation {
        rule: rule.to_string(),
        entity: entity.to_string(),
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// On-disk representation
// ---------------------------------------------------------------------------

/// Raw file records, as parsed from the TOML document. Duplicate ids can
/// only be expressed at this level; the in-memory `KnowledgeBase` keys
/// entries by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbFile {
    pub format_version: u32,
    #[serde(default)]
    pub findings: Vec<Finding>,
    #[serde(default)]
    pub diseases: Vec<DiseaseRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseRecord {
    pub id: DiseaseId,
    pub name: String,
    pub categories: Vec<String>,
    #[serde(default)]
    pub links: Vec<LinkRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub finding: FindingId,
    pub evoking_strength: u8,
    pub frequency: u8,
}

impl KbFile {
    pub fn from_kb(kb: &KnowledgeBase) -> Self {
        KbFile {
            format_version: KB_FORMAT_VERSION,
            findings: kb.findings.values().cloned().collect(),
            diseases: kb
                .diseases
                .values()
                .map(|d| DiseaseRecord {
                    id: d.id.clone(),
                    name: d.name.clone(),
                    categories: d.categories.clone(),
                    links: d
                        .links
                        .iter()
                        .map(|(f, l)| LinkRecord {
                            finding: f.clone(),
                            evoking_strength: l.evoking_strength,
                            frequency: l.frequency,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Parse and fully validate a knowledge base file.
pub fn load_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase, KbError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_kb_str(&text)
}

/// As `load_kb`, from an in-memory string.
pub fn load_kb_str(text: &str) -> Result<KnowledgeBase, KbError> {
    let file: KbFile = toml::from_str(text).map_err(|e| KbError::Parse(e.to_string()))?;
    kb_from_file(file)
}

/// Build a `KnowledgeBase` from raw records, rejecting any invariant violation.
pub fn kb_from_file(file: KbFile) -> Result<KnowledgeBase, KbError> {
    if file.format_version != KB_FORMAT_VERSION {
        return Err(KbError::FormatVersion(file.format_version));
    }
    let violations = validate_records(&file);
    if !violations.is_empty() {
        return Err(KbError::Invalid(violations));
    }
    let findings: BTreeMap<FindingId, Finding> = file
        .findings
        .into_iter()
        .map(|f| (f.id.clone(), f))
        .collect();
    let diseases: BTreeMap<DiseaseId, DiseaseEntry> = file
        .diseases
        .into_iter()
        .map(|d| {
            let links = d
                .links
                .into_iter()
                .map(|l| {
                    (
                        l.finding,
                        Link {
                            evoking_strength: l.evoking_strength,
                            frequency: l.frequency,
                        },
                    )
                })
                .collect();
            (
                d.id.clone(),
                DiseaseEntry {
                    id: d.id,
                    name: d.name,
                    categories: d.categories,
                    links,
                },
            )
        })
        .collect();
    Ok(KnowledgeBase { findings, diseases })
}

/// Serialize deterministically (entries sorted by id) to the documented format.
pub fn kb_to_string(kb: &KnowledgeBase) -> String {
    let mut file = KbFile::from_kb(kb);
    file.findings.sort_by(|a, b| a.id.cmp(&b.id));
    file.diseases.sort_by(|a, b| a.id.cmp(&b.id));
    for d in &mut file.diseases {
        d.links.sort_by(|a, b| a.finding.cmp(&b.finding));
    }
    toml::to_string_pretty(&file).expect("kb serialization cannot fail")
}

pub fn write_kb(kb: &KnowledgeBase, path: impl AsRef<Path>) -> Result<(), KbError> {
    let path = path.as_ref();
    std::fs::write(path, kb_to_string(kb)).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

fn check_scale(
    out: &mut Vec<Violation>,
    rule: &str,
    entity: &dyn fmt::Display,
    field: &str,
    value: u8,
) {
    if !(1..=5).contains(&value) {
        out.push(violation(
            rule,
            entity,
            format!("{field} {value} out of range 1..=5"),
        ));
    }
}

/// Validate raw file records. This is the only level at which duplicate ids
/// are observable.
pub fn validate_records(file: &KbFile) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut finding_ids = BTreeSet::new();
    for f in &file.findings {
        if !finding_ids.insert(f.id.clone()) {
            out.push(violation("duplicate-id", &f.id, "finding id appears twice"));
        }
        check_scale(&mut out, "import-range", &f.id, "import", f.import);
        if f.kind == FindingKind::Demographic && f.exclusion_group.is_none() {
            out.push(violation(
                "demographic-without-group",
                &f.id,
                "demographic finding must set exclusion_group",
            ));
        }
    }

    let finding_kind: BTreeMap<&FindingId, FindingKind> =
        file.findings.iter().map(|f| (&f.id, f.kind)).collect();

    let mut disease_ids = BTreeSet::new();
    for d in &file.diseases {
        if !disease_ids.insert(d.id.clone()) {
            out.push(violation("duplicate-id", &d.id, "disease id appears twice"));
        }
        if d.categories.is_empty() {
            out.push(violation(
                "no-categories",
                &d.id,
                "disease must belong to at least one category",
            ));
        }
        let mut linked = BTreeSet::new();
        let mut has_symptom = false;
        for l in &d.links {
            if !linked.insert(l.finding.clone()) {
                out.push(violation(
                    "duplicate-link",
                    &d.id,
                    format!("finding {} linked twice", l.finding),
                ));
            }
            match finding_kind.get(&l.finding) {
                None => out.push(violation(
                    "dangling-link",
                    &d.id,
                    format!("link references unknown finding {}", l.finding),
                )),
                Some(FindingKind::Symptom) => has_symptom = true,
                Some(_) => {}
            }
            let entity = format!("{} -> {}", d.id, l.finding);
            check_scale(
                &mut out,
                "evoking-strength-range",
                &entity,
                "evoking_strength",
                l.evoking_strength,
            );
            check_scale(&mut out, "frequency-range", &entity, "frequency", l.frequency);
        }
        if !has_symptom {
            out.push(violation(
                "no-symptom-links",
                &d.id,
                "disease has no symptom-kind finding links",
            ));
        }
    }
    out
}

/// Validate an in-memory knowledge base. Violations are data, not errors;
/// an empty report means the KB satisfies every invariant.
pub fn validate_kb(kb: &KnowledgeBase) -> Vec<Violation> {
    validate_records(&KbFile::from_kb(kb))
}

// ---------------------------------------------------------------------------
// Accessors
// ---------------------------------------------------------------------------

impl KnowledgeBase {
    pub fn finding(&self, id: &FindingId) -> Option<&Finding> {
        self.findings.get(id)
    }

    pub fn disease(&self, id: &DiseaseId) -> Option<&DiseaseEntry> {
        self.diseases.get(id)
    }

    pub fn disease_name(&self, id: &DiseaseId) -> Option<&str> {
        self.diseases.get(id).map(|d| d.name.as_str())
    }

    /// All category names in sorted order.
    pub fn categories(&self) -> BTreeSet<String> {
        self.diseases
            .values()
            .flat_map(|d| d.categories.iter().cloned())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Synthetic knowledge base
// ---------------------------------------------------------------------------

const QUALITIES: &[&str] = &[
    "aching", "burning", "colicky", "dull", "episodic", "intermittent", "persistent", "radiating",
    "severe", "sharp", "stabbing", "throbbing",
];

const SITES: &[&str] = &[
    "abdominal", "back", "chest", "facial", "flank", "head", "joint", "limb", "neck", "ocular",
    "pelvic", "shoulder",
];

const SYMPTOM_NOUNS: &[&str] = &[
    "pain", "discomfort", "swelling", "stiffness", "weakness", "numbness", "rash", "tenderness",
    "cramping", "tingling",
];

const PREDISPOSING_NAMES: &[&str] = &[
    "cigarette smoking history",
    "recent travel history",
    "animal exposure history",
    "family history of similar illness",
    "recent surgery history",
    "alcohol use history",
    "occupational dust exposure",
    "tick bite history",
    "transfusion history",
    "immunosuppressive therapy history",
];

const DISEASE_STEMS: &[&str] = &[
    "arteritis",
    "cytopenia",
    "dermatosis",
    "encephalitis",
    "fibrosis",
    "granulomatosis",
    "myelopathy",
    "nephropathy",
    "neuropathy",
    "osteodystrophy",
    "polyangiitis",
    "porphyria",
];

const DISEASE_QUALIFIERS: &[&str] = &[
    "acquired",
    "congenital",
    "disseminated",
    "familial",
    "idiopathic",
    "juvenile",
    "necrotizing",
    "nodular",
    "recurrent",
    "systemic",
];

const CATEGORIES: &[&str] = &[
    "Degenerative disorders",
    "Endocrine disease",
    "Immune system disorders",
    "Infectious disease",
    "Metabolic disorders",
    "Neoplastic disease",
];

/// Deterministically generate a valid knowledge base for tests, examples,
/// and offline pipeline runs. For a fixed seed the output is byte-identical
/// across calls.
///
/// `n_findings` counts non-demographic findings (symptoms plus predisposing
/// factors); a sex exclusion group and three age-band findings are added on
/// top. `links_per_disease` bounds the number of non-demographic links drawn
/// for each disease.
pub fn synth_kb(
    rng_seed: u64,
    n_diseases: usize,
    n_findings: usize,
    links_per_disease: RangeInclusive<usize>,
) -> Result<KnowledgeBase, KbError> {
    let (lo, hi) = (*links_per_disease.start(), *links_per_disease.end());
    if n_diseases == 0 {
        return Err(KbError::InfeasibleParameters(
            "n_diseases must be at least 1".into(),
        ));
    }
    if lo == 0 || lo > hi {
        return Err(KbError::InfeasibleParameters(format!(
            "links_per_disease {lo}..={hi} is empty or zero"
        )));
    }
    if n_findings < hi {
        return Err(KbError::InfeasibleParameters(format!(
            "links_per_disease max {hi} exceeds n_findings {n_findings}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut findings = Vec::new();

    // Demographics: one sex group plus an age group.
    for (id, name) in [("sex_male", "sex male"), ("sex_female", "sex female")] {
        findings.push(Finding {
            id: FindingId::new(id),
            name: name.to_string(),
            definition: None,
            import: 1,
            kind: FindingKind::Demographic,
            exclusion_group: Some("sex".into()),
        });
    }
    for (id, name) in [
        ("age_under_26", "age under 26"),
        ("age_26_to_55", "age 26 to 55"),
        ("age_over_55", "age over 55"),
    ] {
        findings.push(Finding {
            id: FindingId::new(id),
            name: name.to_string(),
            definition: None,
            import: 1,
            kind: FindingKind::Demographic,
            exclusion_group: Some("age".into()),
        });
    }

    // Non-demographic findings. Roughly one in five is a predisposing factor.
    let mut onset_members = 0;
    for i in 0..n_findings {
        let id = FindingId::new(format!("f{i:03}"));
        let predisposing = i % 5 == 4;
        let (kind, name) = if predisposing {
            (
                FindingKind::Predisposing,
                format!(
                    "{} ({})",
                    PREDISPOSING_NAMES[(i / 5) % PREDISPOSING_NAMES.len()],
                    i
                ),
            )
        } else {
            let name = format!(
                "{} {} {} ({})",
                QUALITIES[i % QUALITIES.len()],
                SITES[(i / QUALITIES.len()) % SITES.len()],
                SYMPTOM_NOUNS[i % SYMPTOM_NOUNS.len()],
                i
            );
            (FindingKind::Symptom, name)
        };
        // The first two symptom findings form a mutually exclusive onset pair.
        let exclusion_group = if kind == FindingKind::Symptom && onset_members < 2 {
            onset_members += 1;
            Some("onset".to_string())
        } else {
            None
        };
        let definition = if i % 2 == 0 {
            Some(format!("Patient reports {}.", name))
        } else {
            None
        };
        findings.push(Finding {
            id,
            name,
            definition,
            import: rng.gen_range(1..=5),
            kind,
            exclusion_group,
        });
    }

    let pool: Vec<&Finding> = findings
        .iter()
        .filter(|f| f.kind != FindingKind::Demographic)
        .collect();
    let symptom_pool: Vec<usize> = pool
        .iter()
        .enumerate()
        .filter(|(_, f)| f.kind == FindingKind::Symptom)
        .map(|(i, _)| i)
        .collect();

    let mut diseases = Vec::new();
    for i in 0..n_diseases {
        let id = DiseaseId::new(format!("d{i:03}"));
        let name = format!(
            "{} {} ({})",
            DISEASE_QUALIFIERS[i % DISEASE_QUALIFIERS.len()],
            DISEASE_STEMS[(i / DISEASE_QUALIFIERS.len()) % DISEASE_STEMS.len()],
            i
        );
        let n_links = rng.gen_range(lo..=hi);
        let mut chosen = BTreeSet::new();
        // Guarantee at least one symptom link.
        chosen.insert(symptom_pool[rng.gen_range(0..symptom_pool.len())]);
        while chosen.len() < n_links {
            chosen.insert(rng.gen_range(0..pool.len()));
        }
        let mut links = BTreeMap::new();
        for idx in chosen {
            links.insert(
                pool[idx].id.clone(),
                Link {
                    evoking_strength: rng.gen_range(1..=5),
                    frequency: rng.gen_range(1..=5),
                },
            );
        }
        // Demographic links: one or both sexes, one or two adjacent age bands.
        let sex_pick = rng.gen_range(0..3u8);
        if sex_pick != 1 {
            links.insert(
                FindingId::new("sex_male"),
                Link {
                    evoking_strength: 1,
                    frequency: rng.gen_range(2..=5),
                },
            );
        }
        if sex_pick != 0 {
            links.insert(
                FindingId::new("sex_female"),
                Link {
                    evoking_strength: 1,
                    frequency: rng.gen_range(2..=5),
                },
            );
        }
        let ages = ["age_under_26", "age_26_to_55", "age_over_55"];
        let first_age = rng.gen_range(0..ages.len());
        links.insert(
            FindingId::new(ages[first_age]),
            Link {
                evoking_strength: 1,
                frequency: rng.gen_range(2..=5),
            },
        );
        if rng.gen_bool(0.4) {
            let second = (first_age + 1) % ages.len();
            links.insert(
                FindingId::new(ages[second]),
                Link {
                    evoking_strength: 1,
                    frequency: rng.gen_range(1..=4),
                },
            );
        }

        let mut categories = vec![CATEGORIES[i % CATEGORIES.len()].to_string()];
        if rng.gen_bool(0.3) {
            let extra = CATEGORIES[(i + 1 + rng.gen_range(0..CATEGORIES.len() - 1))
                % CATEGORIES.len()]
            .to_string();
            if !categories.contains(&extra) {
                categories.push(extra);
            }
        }

        diseases.push(DiseaseRecord {
            id: id.clone(),
            name,
            categories,
            links: links
                .into_iter()
                .map(|(finding, l)| LinkRecord {
                    finding,
                    evoking_strength: l.evoking_strength,
                    frequency: l.frequency,
                })
                .collect(),
        });
    }

    kb_from_file(KbFile {
        format_version: KB_FORMAT_VERSION,
        findings,
        diseases,
    })
}
