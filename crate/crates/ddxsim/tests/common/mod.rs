//! Shared fixtures for the integration suites.
#![allow(dead_code)] // each test binary uses a different subset

use std::collections::BTreeMap;

use ddxsim::chat::{ChatMessage, ChatMeta, ChatMode, ChatRecord, ChatRole};
use ddxsim::dataset::{CorpusRecord, Provenance};
use ddxsim::kb::{
    kb_from_file, DiseaseRecord, Finding, FindingKind, KbFile, KnowledgeBase, LinkRecord,
};
use ddxsim::scorer::{CaseEntry, CaseFindings, DdxEntry, RankedDdx};
use ddxsim::sim::StructuredCase;

pub fn symptom(id: &str, import: u8) -> Finding {
    Finding {
        id: id.into(),
        name: id.replace('_', " "),
        definition: None,
        import,
        kind: FindingKind::Symptom,
        exclusion_group: None,
    }
}

pub fn link(finding: &str, es: u8, freq: u8) -> LinkRecord {
    LinkRecord {
        finding: finding.into(),
        evoking_strength: es,
        frequency: freq,
    }
}

/// Two diseases with identical link sets; neither can ever be strictly
/// top-scoring.
pub fn duplicate_disease_kb() -> KnowledgeBase {
    let findings: Vec<Finding> = (0..10).map(|i| symptom(&format!("f{i}"), 3)).collect();
    let links: Vec<LinkRecord> = (0..10).map(|i| link(&format!("f{i}"), 4, 3)).collect();
    kb_from_file(KbFile {
        format_version: 1,
        findings,
        diseases: vec![
            DiseaseRecord {
                id: "d0".into(),
                name: "twin alpha".into(),
                categories: vec!["Twin".into()],
                links: links.clone(),
            },
            DiseaseRecord {
                id: "d1".into(),
                name: "twin beta".into(),
                categories: vec!["Twin".into()],
                links,
            },
        ],
    })
    .unwrap()
}

/// Gate fixture: the seed disease links a single high-frequency symptom, so
/// an attempt is valid exactly when that symptom rolls present.
pub fn gate_kb() -> KnowledgeBase {
    kb_from_file(KbFile {
        format_version: 1,
        findings: vec![symptom("f_seed", 1), symptom("f_other", 1)],
        diseases: vec![
            DiseaseRecord {
                id: "d_seed".into(),
                name: "gate seed disease".into(),
                categories: vec!["Gate".into()],
                links: vec![link("f_seed", 5, 5)],
            },
            DiseaseRecord {
                id: "d_other".into(),
                name: "gate competitor".into(),
                categories: vec!["Gate".into()],
                links: vec![link("f_other", 5, 5)],
            },
        ],
    })
    .unwrap()
}

/// A minimal corpus record whose structured-case identity is driven by a
/// numeric tag: equal tags collide, different tags do not.
pub fn corpus_record(id: &str, disease: &str, case_tag: usize) -> CorpusRecord {
    let case = StructuredCase {
        seed_disease: disease.into(),
        findings: CaseFindings::new(vec![
            CaseEntry::present(format!("f{case_tag}")),
            CaseEntry::absent(format!("g{case_tag}")),
        ]),
        ddx: RankedDdx {
            entries: vec![DdxEntry {
                disease: disease.into(),
                score: 12,
            }],
        },
        demographics: BTreeMap::new(),
    };
    let chat = ChatRecord {
        case_id: id.to_string(),
        seed_disease: disease.into(),
        messages: vec![
            ChatMessage {
                role: ChatRole::System,
                text: "Patient is Pat, a 41-year-old female from Nowhere.".into(),
                findings: Vec::new(),
            },
            ChatMessage {
                role: ChatRole::Provider,
                text: "What brings you in?".into(),
                findings: Vec::new(),
            },
            ChatMessage {
                role: ChatRole::Patient,
                text: "I have been feeling unwell.".into(),
                findings: Vec::new(),
            },
        ],
        meta: ChatMeta {
            model: "mock".into(),
            mode: ChatMode::Single,
            repair_attempts: 0,
            discarded: false,
        },
    };
    corpus_record_from(id, case, chat)
}

pub fn corpus_record_from(id: &str, case: StructuredCase, chat: ChatRecord) -> CorpusRecord {
    CorpusRecord {
        id: id.to_string(),
        case,
        chat,
        provenance: Provenance {
            generator_model: "mock".into(),
            rng_seed: 0,
            generated_at_unix: None,
        },
    }
}
