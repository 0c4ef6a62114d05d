use super::*;
use crate::catalog::CatalogRecord;
use crate::exec::{run_node, Stores};
use crate::interpreter::{Grammar, Interpreter, Lexicon};
use crate::memory::{ConversationState, Turn};
use crate::plan::build_plan;
use crate::store::{Document, DocumentStore};
use crate::tracking::{Trace, TrackingStore};
use crate::vector::{Chunk, Embedder, VectorIndex};
use proptest::prelude::*;
use std::string::ToString;

fn lines<T: serde::de::DeserializeOwned>(text: &str) -> Vec<T> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).unwrap()).collect()
}

struct World {
    catalog: Catalog,
    interp: Interpreter,
    docs: DocumentStore,
    tracking: TrackingStore,
    vectors: VectorIndex,
    embedder: Embedder,
}

fn world() -> World {
    let catalog =
        Catalog::from_records(lines::<CatalogRecord>(include_str!("../../../../fixtures/catalog.jsonl"))).unwrap();
    let lexicon: Lexicon = serde_json::from_str(include_str!("../../../../fixtures/lexicon.json")).unwrap();
    let grammar: Grammar = serde_json::from_str(include_str!("../../../../fixtures/grammar.json")).unwrap();
    let interp = Interpreter::new(lexicon, grammar, SeasonClock { season: 2024, week: 10 })
        .unwrap()
        .with_home_team(Some("t_min".into()));
    let mut docs = DocumentStore::with_default_collections();
    for (name, text) in [
        ("player_season_stats", include_str!("../../../../fixtures/player_season_stats.jsonl")),
        ("game_logs", include_str!("../../../../fixtures/game_logs.jsonl")),
        ("metric_ranks", include_str!("../../../../fixtures/metric_ranks.jsonl")),
        ("cap_table", include_str!("../../../../fixtures/cap_table.jsonl")),
        ("plays", include_str!("../../../../fixtures/plays.jsonl")),
    ] {
        docs.ingest(name, lines::<Document>(text)).unwrap();
    }
    let mut tracking = TrackingStore::default();
    for t in lines::<Trace>(include_str!("../../../../fixtures/traces.jsonl")) {
        tracking.insert(t).unwrap();
    }
    let chunks = lines::<Chunk>(include_str!("../../../../fixtures/chunks.jsonl"));
    let embedder = Embedder::from_chunks(&chunks).unwrap();
    let mut vectors = VectorIndex::new();
    for c in chunks {
        vectors.add(c, &embedder).unwrap();
    }
    World { catalog, interp, docs, tracking, vectors, embedder }
}

fn options() -> SynthOptions {
    SynthOptions { media_base_url: "http://media.test".into(), clock: SeasonClock { season: 2024, week: 10 } }
}

impl World {
    fn stores(&self) -> Stores<'_> {
        Stores { documents: &self.docs, tracking: &self.tracking, vectors: &self.vectors, embedder: &self.embedder }
    }

    fn outcomes(&self, plan: &QueryPlan) -> BTreeMap<String, NodeOutcome> {
        let mut done: BTreeMap<String, SubAnswer> = BTreeMap::new();
        let mut out = BTreeMap::new();
        for stage in plan.stages().unwrap() {
            for id in stage {
                let node = plan.node(&id).unwrap();
                let outcome = match run_node(node, &done, self.stores()) {
                    Ok(a) => {
                        done.insert(id.clone(), a.clone());
                        NodeOutcome::Answered(a)
                    }
                    Err(e) => NodeOutcome::Failed(NodeFailure {
                        node_id: id.clone(),
                        reason: FailureReason::Error(e.to_string()),
                    }),
                };
                out.insert(id, outcome);
            }
        }
        out
    }

    fn converse(&self, prompts: &[&str]) -> Vec<(ParsedQuery, QueryPlan, Answer)> {
        let mut state = ConversationState::new("c");
        let mut out = Vec::new();
        for p in prompts {
            let parsed = self.interp.parse(p, &state, &self.catalog).unwrap_or_else(|e| panic!("{p}: {e:?}"));
            let plan = build_plan(&parsed, &self.catalog).unwrap();
            let outcomes = self.outcomes(&plan);
            let answer = synthesize(&parsed, &plan, &outcomes, &self.catalog, &TemplateGenerator, &options()).unwrap();
            state = state
                .record_turn(Turn {
                    turn_index: state.next_turn_index(),
                    user_prompt: p.to_string(),
                    parsed: parsed.clone(),
                    answer_digest: String::new(),
                    feedback: None,
                })
                .unwrap();
            out.push((parsed, plan, answer));
        }
        out
    }

    fn ask(&self, prompt: &str) -> Answer {
        self.converse(&[prompt]).pop().unwrap().2
    }
}

/// Independent sum over the raw fixture lines.
fn oracle_sum(player: &str, field: &str, season: i64, through: i64) -> i64 {
    lines::<serde_json::Value>(include_str!("../../../../fixtures/player_season_stats.jsonl"))
        .iter()
        .filter(|d| d["player_id"] == player && d["season"] == season && d["week"].as_i64().unwrap() <= through)
        .filter_map(|d| d[field].as_i64())
        .sum()
}

fn numbers(s: &str) -> Vec<f64> {
    crate::eval::extract_numbers(s)
}

fn has(text: &str, n: f64) -> bool {
    numbers(text).iter().any(|x| (x - n).abs() < 1e-9)
}

const PASSING: [&str; 3] = [
    "Who has more passing yards this season mahomes or purdy?",
    "But who has more passing TDs?",
    "Okay, so who is better?",
];

#[test]
fn passing_comparison_matches_oracle() {
    let w = world();
    let turns = w.converse(&PASSING);
    let (purdy, mahomes) =
        (oracle_sum("p_purdy", "pass_yards", 2024, 10), oracle_sum("p_mahomes", "pass_yards", 2024, 10));
    assert_eq!((purdy, mahomes), (2454, 2208));
    let text = &turns[0].2.text;
    assert!(text.contains("Brock Purdy has more passing yards"), "{text}");
    assert!(text.contains("2,454") && text.contains("2,208"), "{text}");
    assert!(turns[0].2.failures.is_empty());

    let tds = (oracle_sum("p_purdy", "pass_td", 2024, 10), oracle_sum("p_mahomes", "pass_td", 2024, 10));
    assert_eq!(tds, (12, 12));
    let text = &turns[1].2.text;
    assert!(text.contains("both have 12 passing touchdowns"), "{text}");
}

#[test]
fn verdict_counts_metric_wins() {
    let w = world();
    let turns = w.converse(&PASSING);
    let answer = &turns[2].2;
    let verdict = answer.verdict.as_ref().unwrap();
    assert_eq!(verdict.winner.as_deref(), Some("p_mahomes"));
    assert_eq!(verdict.sides[0].metrics, ["passing_composite", "qb_accuracy", "twar"]);
    assert_eq!(verdict.sides[1].metrics, ["qb_decision_making", "qb_iq"]);
    let text = &answer.text;
    assert!(text.contains("Patrick Mahomes is the better quarterback"), "{text}");
    assert!(text.contains("Passing Composite, QB Accuracy, and True Wins Above Replacement"), "{text}");
    assert!(text.contains("QB Decision Making and QB IQ"), "{text}");
    assert!(text.contains("week 10 of the 2024"), "{text}");
}

#[test]
fn record_against_conference() {
    let w = world();
    let a = w.ask("What was Kirk Cousins' record against AFC teams during the 2021, 2022, and 2023 seasons?");
    // oracle straight from the raw game log lines
    let logs = lines::<serde_json::Value>(include_str!("../../../../fixtures/game_logs.jsonl"));
    let sel: Vec<_> = logs
        .iter()
        .filter(|g| [2021, 2022, 2023].contains(&g["season"].as_i64().unwrap()))
        .filter(|g| g["opponent_conference"] == "AFC" && g["played"] == true && g["game_type"] == "REG")
        .collect();
    let wins = sel.iter().filter(|g| g["result"] == "W").count();
    let losses = sel.iter().filter(|g| g["result"] == "L").count();
    assert_eq!((wins, losses), (7, 5));
    assert!(a.text.contains("7-5 record against AFC teams"), "{}", a.text);
    assert!(a.text.contains("Minnesota Vikings"), "{}", a.text);
}

#[test]
fn weakness_picks_worst_rank() {
    let w = world();
    let a = w.ask("What is the offensive weakness of the Baltimore Ravens in the 2024 NFL regular season?");
    assert!(a.text.contains("run blocking"), "{}", a.text);
    assert!(a.text.contains("19th out of 32 teams"), "{}", a.text);
    // the week 11 row must not leak in
    assert!(!has(&a.text, 22.0), "{}", a.text);
}

#[test]
fn mismatch_lists_each_pair() {
    let w = world();
    let a = w.ask(
        "What are the mismatches between the Minnesota Vikings' defense and Baltimore Ravens' offense in the 2024 NFL regular season?",
    );
    for n in [1.0, 17.0, 3.0, 28.0, 32.0] {
        assert!(has(&a.text, n), "{n} missing from {}", a.text);
    }
}

#[test]
fn front_office_conversation() {
    let w = world();
    let turns = w.converse(&[
        "What is Anthony Richardson's trade value?",
        "What is his market cap?",
        "How much space will that free up for the colts if he leaves?",
    ]);
    let t = &turns[0].2.text;
    assert!(t.contains("0.10") && t.contains("39th out of 48 quarterbacks"), "{t}");
    assert!(t.contains("lower tier"), "{t}");
    assert!(turns[1].2.text.contains("$7,725,916"), "{}", turns[1].2.text);
    let t = &turns[2].2.text;
    for m in ["$6,180,733", "$7,725,916", "$9,271,099", "$10,816,283"] {
        assert!(t.contains(m), "{m} missing from {t}");
    }
    assert!(t.contains("2027"), "{t}");
    assert_eq!(turns[2].2.tables[0].rows.len(), 4);
}

#[test]
fn roster_takes_each_position_leader() {
    let w = world();
    let a = w.ask("Build me the perfect team from the 2022 season.");
    let ranks = lines::<serde_json::Value>(include_str!("../../../../fixtures/metric_ranks.jsonl"));
    let table = &a.tables[0];
    assert_eq!(table.rows.len(), 10);
    for (i, row) in table.rows.iter().enumerate() {
        let pos = row[0].as_str().unwrap();
        let best = ranks
            .iter()
            .filter(|r| r["metric"] == "twar" && r["season"] == 2022 && r["week"] == 18 && r["position"] == pos)
            .max_by(|a, b| a["value"].as_f64().unwrap().total_cmp(&b["value"].as_f64().unwrap()))
            .unwrap();
        let name = w.catalog.entity(best["entity_id"].as_str().unwrap()).unwrap().canonical_name.clone();
        assert_eq!(row[1], Scalar::Text(name), "row {i}");
    }
    assert!(a.text.contains("Patrick Mahomes") && a.text.contains("5.79"), "{}", a.text);
}

#[test]
fn video_answer_links_verified_plays() {
    let w = world();
    let a = w.ask("How did Patrick Mahomes perform against Cover 2 in last night's game?");
    let ids: Vec<&str> = a.media_links.iter().map(|m| m.play_id.as_str()).collect();
    assert_eq!(ids, ["P1", "P2", "P3"]);
    assert_eq!(a.media_links[0].url, "http://media.test/plays/P1");
    assert!(a.failures.is_empty(), "{:?}", a.failures);
}

#[test]
fn home_team_success_rate() {
    let w = world();
    let a = w.ask("What was our success rate on outside zone plays in the second half?");
    let plays = lines::<serde_json::Value>(include_str!("../../../../fixtures/plays.jsonl"));
    let sel: Vec<f64> = plays
        .iter()
        .filter(|p| p["offense_team"] == "t_min" && p["concept"] == "outside_zone" && p["half"] == 2)
        .filter(|p| p["season"] == 2024 && p["week"].as_i64().unwrap() <= 10)
        .map(|p| p["success"].as_f64().unwrap())
        .collect();
    let rate = sel.iter().sum::<f64>() / sel.len() as f64;
    let cell = a.tables[0].cell(0, "success_rate").and_then(Scalar::as_f64).unwrap();
    assert!((cell - rate).abs() < 1e-9);
    assert!(a.text.contains("Minnesota Vikings"), "{}", a.text);
}

#[test]
fn context_search_returns_reports() {
    let w = world();
    let a = w.ask("Which free agents have excelled in man-to-man coverage over the past two seasons?");
    assert!(a.text.contains("man-to-man"), "{}", a.text);
}

#[test]
fn all_failed_is_an_error() {
    let w = world();
    let parsed = w.interp.parse(PASSING[0], &ConversationState::new("c"), &w.catalog).unwrap();
    let plan = build_plan(&parsed, &w.catalog).unwrap();
    let outcomes: BTreeMap<String, NodeOutcome> = plan
        .nodes
        .iter()
        .map(|n| {
            (
                n.node_id.clone(),
                NodeOutcome::Failed(NodeFailure { node_id: n.node_id.clone(), reason: FailureReason::Timeout }),
            )
        })
        .collect();
    assert_eq!(
        synthesize(&parsed, &plan, &outcomes, &w.catalog, &TemplateGenerator, &options()),
        Err(SynthError::NoUsableSubAnswers)
    );
}

#[test]
fn partial_failure_is_disclosed() {
    let w = world();
    let parsed = w.interp.parse(PASSING[0], &ConversationState::new("c"), &w.catalog).unwrap();
    let plan = build_plan(&parsed, &w.catalog).unwrap();
    let mut outcomes = w.outcomes(&plan);
    let failed = plan.nodes[1].node_id.clone();
    outcomes
        .insert(failed.clone(), NodeOutcome::Failed(NodeFailure { node_id: failed, reason: FailureReason::Timeout }));
    let a = synthesize(&parsed, &plan, &outcomes, &w.catalog, &TemplateGenerator, &options()).unwrap();
    assert_eq!(a.failures.len(), 1);
    assert!(a.failures[0].ends_with("timed out"));
    assert!(a.text.contains("unavailable"), "{}", a.text);
}

#[test]
fn synthesis_is_deterministic() {
    let w = world();
    let a = w.converse(&PASSING);
    let b = w.converse(&PASSING);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.2, y.2);
    }
}

#[test]
fn failure_text_names_no_numbers() {
    let skeleton = AnswerSkeleton {
        findings: Vec::new(),
        failures: vec![FailureNote { label: "passing yards for Brock Purdy".into(), reason: FailureReason::Timeout }],
    };
    let text = TemplateGenerator.generate(&skeleton);
    assert!(text.starts_with("I could not retrieve"));
    assert!(!text.chars().any(|c| c.is_ascii_digit()), "{text}");
}

#[test]
fn tier_thirds() {
    assert_eq!(Tier::of(16, 48), Tier::Upper);
    assert_eq!(Tier::of(17, 48), Tier::Middle);
    assert_eq!(Tier::of(32, 48), Tier::Middle);
    assert_eq!(Tier::of(33, 48), Tier::Lower);
    assert_eq!(Tier::of(39, 48), Tier::Lower);
}

fn rank(entity: &str, metric: &str, rank: u32, population: u32) -> RankResult {
    RankResult {
        entity_id: entity.into(),
        metric: metric.into(),
        season: 2024,
        week: 10,
        rank,
        population,
        value: None,
    }
}

/// Synthesizes a verdict from hand-made rank results.
fn verdict_for(w: &World, ranks: &[(u32, u32)], population: u32, metrics: &[&str]) -> Option<String> {
    let mut parsed =
        w.interp.parse("Who is better, Mahomes or Purdy?", &ConversationState::new("c"), &w.catalog).unwrap();
    parsed.intent = Intent::MetricVerdict { metrics: metrics.iter().map(|m| m.to_string()).collect() };
    let plan = build_plan(&parsed, &w.catalog).unwrap();
    let mut outcomes = BTreeMap::new();
    for node in &plan.nodes {
        let i = metrics.iter().position(|m| node.key.as_deref() == Some(*m)).unwrap();
        let r = if node.entity_id.as_deref() == Some("p_mahomes") { ranks[i].0 } else { ranks[i].1 };
        let body = SubAnswerBody::Rank(rank(node.entity_id.as_deref().unwrap(), metrics[i], r, population));
        outcomes.insert(
            node.node_id.clone(),
            NodeOutcome::Answered(SubAnswer { node_id: node.node_id.clone(), body, source_note: String::new() }),
        );
    }
    synthesize(&parsed, &plan, &outcomes, &w.catalog, &TemplateGenerator, &options()).unwrap().verdict.unwrap().winner
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // the winner depends only on which side ranks better per metric
    #[test]
    fn verdict_invariant_to_population_and_order(
        ranks in proptest::collection::vec((1u32..40, 1u32..40), 5),
        scale in 1u32..4,
        rotate in 0usize..5,
    ) {
        let w = world();
        let metrics = ["passing_composite", "qb_accuracy", "twar", "qb_decision_making", "qb_iq"];
        let base = verdict_for(&w, &ranks, 48, &metrics);
        let mut rotated_metrics = metrics;
        rotated_metrics.rotate_left(rotate);
        let mut rotated_ranks = ranks.clone();
        rotated_ranks.rotate_left(rotate);
        let scaled: Vec<(u32, u32)> = rotated_ranks.iter().map(|(a, b)| (a * scale, b * scale)).collect();
        let other = verdict_for(&w, &scaled, 48 * scale, &rotated_metrics);
        prop_assert_eq!(&base, &other);
        let a_wins = ranks.iter().filter(|(a, b)| a < b).count();
        let b_wins = ranks.iter().filter(|(a, b)| a > b).count();
        let expected = match a_wins.cmp(&b_wins) {
            core::cmp::Ordering::Greater => Some("p_mahomes".to_string()),
            core::cmp::Ordering::Less => Some("p_purdy".to_string()),
            core::cmp::Ordering::Equal => None,
        };
        prop_assert_eq!(base, expected);
    }

    // every number in the text comes from a sub-answer or the scope
    #[test]
    fn text_numbers_are_grounded(yards in proptest::collection::vec(0i64..600, 2), tds in 0i64..9) {
        let w = world();
        let parsed = w.interp.parse(PASSING[0], &ConversationState::new("c"), &w.catalog).unwrap();
        let plan = build_plan(&parsed, &w.catalog).unwrap();
        let mut outcomes = BTreeMap::new();
        let mut allowed: Vec<f64> = vec![2024.0, 10.0];
        for (node, y) in plan.nodes.iter().zip(&yards) {
            let table = ResultTable {
                columns: vec!["pass_yards".into()],
                rows: vec![vec![Scalar::Int(*y + tds)]],
                provenance: Provenance { collection: "player_season_stats".into(), filter: Vec::new() },
            };
            allowed.push((*y + tds) as f64);
            outcomes.insert(node.node_id.clone(), NodeOutcome::Answered(SubAnswer {
                node_id: node.node_id.clone(), body: SubAnswerBody::Table(table), source_note: String::new(),
            }));
        }
        let a = synthesize(&parsed, &plan, &outcomes, &w.catalog, &TemplateGenerator, &options()).unwrap();
        for n in numbers(&a.text) {
            prop_assert!(allowed.iter().any(|x| (x - n).abs() < 1e-9), "{} not grounded in {}", n, a.text);
        }
    }
}
