//! Synthetic multi-agent corpus with planted evidence.
//!
//! Six agents record two days of filler captions in 10-minute buckets.
//! Twenty questions are answerable only from evidence captions planted at
//! known (agent, bucket) locations:
//!
//! * single-homed items: all evidence sits in one agent's memory and the
//!   question names that agent;
//! * multi-agent items: the evidence is split across two agents. Two of
//!   the wrong options each share one half of the gold answer, so the
//!   overlap answerer only picks the gold option when both halves are in
//!   context.
//!
//! Answer and decoy words are unique tokens that appear nowhere else, and
//! no gold answer sits at option A, so an item with no evidence in context
//! is always answered wrong.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{
    qa_to_json_line, AgentId, AgentInfo, CaptionKind, CaptionRecord, Category, CorpusError, QaItem, Roster, Subtype,
    TimeInterval, Timestamp,
};

pub const AGENTS: [(&str, &str); 6] = [
    ("A1_JAKE", "Jake"),
    ("A2_ALICE", "Alice"),
    ("A3_TASHA", "Tasha"),
    ("A4_LUCIA", "Lucia"),
    ("A5_KATRINA", "Katrina"),
    ("A6_SHURE", "Shure"),
];
pub const DAYS: u32 = 2;
pub const FIRST_HOUR: u32 = 10;
pub const HOURS_PER_DAY: u32 = 3;
pub const BUCKET_MINUTES: u32 = 10;
pub const SINGLE_HOMED: usize = 12;
pub const MULTI_AGENT: usize = 8;
const CUE_WORDS: usize = 5;

const FILLER: &[&str] = &[
    "walks",
    "kitchen",
    "table",
    "chairs",
    "talks",
    "laughs",
    "phone",
    "checks",
    "window",
    "opens",
    "closes",
    "door",
    "sits",
    "stands",
    "living",
    "room",
    "sofa",
    "picks",
    "bag",
    "puts",
    "down",
    "water",
    "bottle",
    "drinks",
    "looks",
    "around",
    "stairs",
    "upstairs",
    "downstairs",
    "hallway",
    "computer",
    "screen",
    "types",
    "message",
    "reads",
    "notes",
    "paper",
    "box",
    "moves",
    "shelf",
    "plate",
    "fork",
    "knife",
    "cuts",
    "fruit",
    "washes",
    "hands",
    "sink",
    "towel",
    "dries",
    "light",
    "switch",
    "music",
    "plays",
    "speaker",
    "charger",
    "cable",
    "plugs",
    "bed",
    "blanket",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvidenceSite {
    pub agent: AgentId,
    pub bucket: Timestamp,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantedEvidence {
    pub qa_id: String,
    pub multi_agent: bool,
    pub sites: Vec<EvidenceSite>,
}

impl PlantedEvidence {
    pub fn agents(&self) -> Vec<AgentId> {
        self.sites.iter().map(|s| s.agent.clone()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PlantedFixture {
    pub roster: Roster,
    pub captions: Vec<CaptionRecord>,
    pub items: Vec<QaItem>,
    pub evidence: Vec<PlantedEvidence>,
}

impl PlantedFixture {
    pub fn evidence_for(&self, qa_id: &str) -> Option<&PlantedEvidence> {
        self.evidence.iter().find(|e| e.qa_id == qa_id)
    }

    /// Writes `roster.json`, `captions.jsonl` and `qa.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), CorpusError> {
        let io = |p: &Path, e: std::io::Error| CorpusError::Io {
            path: p.display().to_string(),
            source: e,
        };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let roster_path = dir.join("roster.json");
        fs::write(
            &roster_path,
            serde_json::to_string_pretty(&self.roster).expect("roster serializes"),
        )
        .map_err(|e| io(&roster_path, e))?;
        crate::corpus::write_captions(&dir.join("captions.jsonl"), &self.captions)?;
        let qa_path = dir.join("qa.jsonl");
        let body: String = self.items.iter().map(|it| qa_to_json_line(it) + "\n").collect();
        fs::write(&qa_path, body).map_err(|e| io(&qa_path, e))
    }
}

pub fn fixture_roster() -> Roster {
    Roster::new(
        AGENTS
            .iter()
            .map(|(id, name)| AgentInfo {
                id: AgentId::new(*id).expect("fixture id"),
                name: name.to_string(),
            })
            .collect(),
    )
    .expect("fixture roster is valid")
}

/// Every bucket start in the fixture timeline, chronological.
pub fn bucket_starts() -> Vec<Timestamp> {
    let per_day = HOURS_PER_DAY * 60 / BUCKET_MINUTES;
    (1..=DAYS)
        .flat_map(|day| {
            (0..per_day).map(move |b| {
                let minute = FIRST_HOUR * 60 + b * BUCKET_MINUTES;
                Timestamp::from_hms(day, minute / 60, minute % 60, 0).expect("fixture timestamp")
            })
        })
        .collect()
}

fn ts_plus(bucket: Timestamp, minutes: u32) -> Timestamp {
    let m = bucket.minute_of_day() + minutes;
    Timestamp::from_hms(bucket.day(), m / 60, m % 60, 0).expect("fixture timestamp")
}

fn span(bucket: Timestamp, from: u32, to: u32) -> TimeInterval {
    TimeInterval::new(ts_plus(bucket, from), ts_plus(bucket, to)).expect("fixture interval")
}

fn cue(item: usize, k: usize) -> String {
    format!("cue{item}x{k}")
}

fn words(prefix: &str, item: usize, part: usize, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{prefix}{item}x{part}x{k}")).collect()
}

/// Builds the fixture. `seed` only drives the filler text.
pub fn planted_fixture(seed: u64) -> PlantedFixture {
    let roster = fixture_roster();
    let buckets = bucket_starts();
    let nb = buckets.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used: HashSet<(usize, usize)> = HashSet::new();
    let mut claim = |agent: usize, mut b: usize| -> usize {
        while !used.insert((agent, b)) {
            b = (b + 1) % nb;
        }
        b
    };

    let mut planted: Vec<(usize, usize, String)> = Vec::new();
    let mut items = Vec::new();
    let mut evidence = Vec::new();
    let mut next_item = 0usize;

    for i in 0..SINGLE_HOMED {
        let id = next_item;
        next_item += 1;
        let agent = i % AGENTS.len();
        let b = claim(agent, (i * 5 + 3) % nb);
        let name = AGENTS[agent].1;
        let cues: Vec<String> = (0..CUE_WORDS).map(|k| cue(id, k)).collect();
        let answer = words("ans", id, 0, 2);
        let text = format!("{name} handled the {} and found {}", cues.join(" "), answer.join(" "));
        planted.push((agent, b, text.clone()));

        let gold = 1 + i % 4;
        let mut options: Vec<String> = (0..5).map(|o| words("decoy", id, o, 2).join(" ")).collect();
        options[gold] = answer.join(" ");
        items.push(make_item(
            id,
            Category::ALL[i % 5],
            Subtype::SingleSpan,
            format!("What did {name} find after handling the {}?", cues.join(" ")),
            options,
            gold,
            vec![AgentId::new(AGENTS[agent].0).unwrap()],
            vec![crate::corpus::bucket_interval(buckets[b], BUCKET_MINUTES)],
            text.clone(),
        ));
        evidence.push(PlantedEvidence {
            qa_id: items.last().unwrap().id.clone(),
            multi_agent: false,
            sites: vec![EvidenceSite {
                agent: AgentId::new(AGENTS[agent].0).unwrap(),
                bucket: buckets[b],
                text,
            }],
        });
    }

    for j in 0..MULTI_AGENT {
        let id = next_item;
        next_item += 1;
        let a1 = j % AGENTS.len();
        let a2 = (j + 2 + j / 3) % AGENTS.len();
        let a2 = if a2 == a1 { (a1 + 1) % AGENTS.len() } else { a2 };
        let b1 = claim(a1, (j * 7 + 1) % nb);
        let b2 = claim(a2, (j * 7 + 4) % nb);
        let (n1, n2) = (AGENTS[a1].1, AGENTS[a2].1);
        let cues1: Vec<String> = (0..CUE_WORDS).map(|k| cue(id, k)).collect();
        let cues2: Vec<String> = (CUE_WORDS..2 * CUE_WORDS).map(|k| cue(id, k)).collect();
        let half1 = words("ans", id, 1, 1);
        let half2 = words("ans", id, 2, 1);
        let t1 = format!("{n1} handled the {} and saw {}", cues1.join(" "), half1.join(" "));
        let t2 = format!("{n2} handled the {} and saw {}", cues2.join(" "), half2.join(" "));
        planted.push((a1, b1, t1.clone()));
        planted.push((a2, b2, t2.clone()));

        let gold = 3 + j % 2;
        let decoy = |p: usize| words("decoy", id, p, 1).join(" ");
        let mut options = vec![
            format!("{} {}", half1[0], decoy(0)),
            format!("{} {}", decoy(1), half2[0]),
            format!("{} {}", decoy(2), decoy(3)),
            format!("{} {}", decoy(4), decoy(5)),
            format!("{} {}", decoy(6), decoy(7)),
        ];
        options[gold] = format!("{} {}", half1[0], half2[0]);
        items.push(make_item(
            id,
            if j % 2 == 0 { Category::SI } else { Category::TC },
            Subtype::MultiSpan,
            format!(
                "What did {n1} and {n2} see while handling the {} and the {}?",
                cues1.join(" "),
                cues2.join(" ")
            ),
            options,
            gold,
            vec![AgentId::new(AGENTS[a1].0).unwrap(), AgentId::new(AGENTS[a2].0).unwrap()],
            vec![
                crate::corpus::bucket_interval(buckets[b1], BUCKET_MINUTES),
                crate::corpus::bucket_interval(buckets[b2], BUCKET_MINUTES),
            ],
            format!("{t1}\n{t2}"),
        ));
        evidence.push(PlantedEvidence {
            qa_id: items.last().unwrap().id.clone(),
            multi_agent: true,
            sites: vec![
                EvidenceSite {
                    agent: AgentId::new(AGENTS[a1].0).unwrap(),
                    bucket: buckets[b1],
                    text: t1,
                },
                EvidenceSite {
                    agent: AgentId::new(AGENTS[a2].0).unwrap(),
                    bucket: buckets[b2],
                    text: t2,
                },
            ],
        });
    }

    let mut captions = Vec::new();
    for (a, (id, name)) in AGENTS.iter().enumerate() {
        let agent = AgentId::new(*id).unwrap();
        for (b, &bucket) in buckets.iter().enumerate() {
            if let Some((_, _, text)) = planted.iter().find(|(pa, pb, _)| *pa == a && *pb == b) {
                captions.push(CaptionRecord {
                    agent: agent.clone(),
                    interval: span(bucket, 2, 5),
                    kind: CaptionKind::VisualCaption,
                    text: text.clone(),
                });
                continue;
            }
            let n_caps = rng.gen_range(1..=2);
            for c in 0..n_caps {
                let chosen: Vec<&str> = FILLER.choose_multiple(&mut rng, 6).copied().collect();
                let kind = if rng.gen_bool(0.3) {
                    CaptionKind::Transcript
                } else {
                    CaptionKind::VisualCaption
                };
                let from = c as u32 * 5;
                captions.push(CaptionRecord {
                    agent: agent.clone(),
                    interval: span(bucket, from, from + 4),
                    kind,
                    text: format!("{name} {}", chosen.join(" ")),
                });
            }
        }
    }
    captions.sort_by(|x, y| (&x.agent, x.interval).cmp(&(&y.agent, y.interval)));

    PlantedFixture {
        roster,
        captions,
        items,
        evidence,
    }
}

#[allow(clippy::too_many_arguments)]
fn make_item(
    n: usize,
    category: Category,
    subtype: Subtype,
    question: String,
    options: Vec<String>,
    answer_index: usize,
    referenced_agents: Vec<AgentId>,
    referenced_intervals: Vec<TimeInterval>,
    gold_context: String,
) -> QaItem {
    QaItem {
        id: format!("planted-{n:02}"),
        category,
        subtype: Some(subtype),
        question,
        options: options.try_into().expect("five options"),
        answer_index,
        referenced_agents,
        referenced_intervals,
        gold_context: Some(gold_context),
        extra: Default::default(),
    }
}
