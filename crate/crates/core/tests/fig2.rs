//! The "Josh Allen" scoring example: a hyperlinked team name, a descriptor
//! in the same coreference cluster, and a separately linked city.

use entmark_core::model::{clusters_from_raw, validate_corpus, Document, RawMention};
use entmark_core::scoring::score_corpus;

const TEXT: &str = "Josh Allen plays quarterback for the Buffalo Bills. \
The team drafted him in 2018. He was born near John R. Oishei Children's Hospital in Buffalo.";

fn span(needle: &str) -> (usize, usize) {
    let s = TEXT.find(needle).unwrap();
    (s, s + needle.len())
}

fn rows() -> Vec<RawMention> {
    let bills = span("Buffalo Bills");
    let team = span("The team");
    let hospital = span("John R. Oishei Children's Hospital");
    let city = span("in Buffalo");
    let city = (city.0 + 3, city.1);
    vec![
        RawMention::hyperlink("d", bills.0, bills.1, "Q221626"),
        RawMention::entity_linking("d", bills.0, bills.1, "Q221626", 0.97),
        RawMention::coref("d", bills.0, bills.1, "team"),
        RawMention::coref("d", team.0, team.1, "team"),
        RawMention::entity_linking("d", hospital.0, hospital.1, "Q6255440", 0.9),
        RawMention::entity_linking("d", city.0, city.1, "Q40435", 0.98),
    ]
}

#[test]
fn descriptor_inherits_the_team() {
    let docs = vec![Document::new("d", "Josh Allen", TEXT)];
    let raw = rows();
    let clusters = clusters_from_raw(&docs, &raw);
    let scored = score_corpus(&docs, &raw, &clusters).unwrap();
    assert!(validate_corpus(&docs, &scored.mentions, &scored.clusters).is_valid());

    let at = |needle: &str| {
        let (s, e) = span(needle);
        scored.mentions.iter().find(|m| m.mention.span.start == s && m.mention.span.end == e).unwrap()
    };

    let team = at("The team");
    let cand = team.mention.candidate("Q221626").unwrap();
    assert!((cand.scores.cc.unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(cand.scores.h, None);
    assert_eq!(team.mention.candidates.len(), 1);

    let bills = at("Buffalo Bills");
    let b = bills.mention.candidate("Q221626").unwrap();
    assert_eq!((b.scores.h, b.scores.el), (Some(1.0), Some(0.97)));

    let city = scored
        .mentions
        .iter()
        .find(|m| m.mention.candidate("Q40435").is_some())
        .unwrap();
    assert_eq!(city.mention.candidate("Q40435").unwrap().scores.el, Some(0.98));
    assert!(city.mention.candidate("Q221626").is_none());
    assert_eq!(city.mention.cluster_id, None);
}
