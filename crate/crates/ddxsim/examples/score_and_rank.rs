//! Score diseases against a hand-built case and rank the differential.
//!
//! Run with: `cargo run -p ddxsim --example score_and_rank`

use ddxsim::kb::{kb_from_file, DiseaseRecord, Finding, FindingKind, KbFile, LinkRecord};
use ddxsim::scorer::{rank_ddx, score_disease, CaseEntry, CaseFindings, ScoreWeights, DDX_CAP};

fn finding(id: &str, name: &str, import: u8) -> Finding {
    Finding {
        id: id.into(),
        name: name.into(),
        definition: None,
        import,
        kind: FindingKind::Symptom,
        exclusion_group: None,
    }
}

fn link(finding: &str, es: u8, freq: u8) -> LinkRecord {
    LinkRecord {
        finding: finding.into(),
        evoking_strength: es,
        frequency: freq,
    }
}

fn main() -> anyhow::Result<()> {
    let kb = kb_from_file(KbFile {
        format_version: 1,
        findings: vec![
            finding("fever", "fever", 3),
            finding("rigors", "rigors", 2),
            finding("myalgia", "myalgia", 2),
            finding("rash", "petechial rash", 4),
        ],
        diseases: vec![
            DiseaseRecord {
                id: "brucellosis".into(),
                name: "brucellosis".into(),
                categories: vec!["Infectious disease".into()],
                links: vec![link("fever", 3, 5), link("rigors", 4, 3), link("myalgia", 2, 4)],
            },
            DiseaseRecord {
                id: "meningococcemia".into(),
                name: "meningococcemia".into(),
                categories: vec!["Infectious disease".into()],
                links: vec![link("fever", 2, 5), link("rash", 5, 4)],
            },
        ],
    })?;

    let weights = ScoreWeights::default();
    let case = CaseFindings::new(vec![
        CaseEntry::present("fever"),
        CaseEntry::present("rigors"),
        CaseEntry::absent("rash"),
    ]);

    println!("case: fever present, rigors present, petechial rash absent\n");
    for disease in kb.diseases.keys() {
        let score = score_disease(&kb, &weights, &case, disease)?;
        println!("{disease:<16} score {score:>4}");
    }

    let ddx = rank_ddx(&kb, &weights, &case, DDX_CAP)?;
    println!("\nranked differential (positive scores only):");
    for (i, entry) in ddx.entries.iter().enumerate() {
        println!("  {}. {} ({})", i + 1, entry.disease, entry.score);
    }
    Ok(())
}
