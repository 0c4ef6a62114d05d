//! Per-conversation dialogue state.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, Scope};
use crate::eval::FeedbackRecord;
use crate::interpreter::ParsedQuery;
use crate::text::{find_phrase, tokenize};

pub const DEFAULT_SALIENCE_DEPTH: usize = 8;

pub const DISCOURSE_MARKERS: &[&str] = &["but", "and", "okay", "so", "what about"];
pub const PRONOUNS: &[&str] = &["he", "his", "she", "her", "they", "their", "that", "it"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    /// 1-based position in the conversation.
    pub turn_index: u32,
    pub user_prompt: String,
    pub parsed: ParsedQuery,
    pub answer_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationState {
    pub conversation_id: String,
    pub turns: Vec<Turn>,
    /// Entity ids, most recent first, without duplicates.
    pub salient_entities: Vec<String>,
    pub last_scope: Option<Scope>,
    pub last_stat: Option<String>,
    #[serde(default = "default_depth")]
    pub depth: usize,
}

fn default_depth() -> usize {
    DEFAULT_SALIENCE_DEPTH
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("turn {got} recorded out of order; expected {expected}")]
pub struct SequenceError {
    pub expected: u32,
    pub got: u32,
}

impl ConversationState {
    pub fn new(conversation_id: impl Into<String>) -> Self {
        ConversationState {
            conversation_id: conversation_id.into(),
            turns: Vec::new(),
            salient_entities: Vec::new(),
            last_scope: None,
            last_stat: None,
            depth: DEFAULT_SALIENCE_DEPTH,
        }
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn next_turn_index(&self) -> u32 {
        self.turns.last().map_or(1, |t| t.turn_index + 1)
    }

    pub fn is_fresh(&self) -> bool {
        self.turns.is_empty()
    }

    /// State after appending `turn`. The entities of the new turn move to the
    /// front of the salience list in prompt order.
    pub fn record_turn(&self, turn: Turn) -> Result<ConversationState, SequenceError> {
        let expected = self.next_turn_index();
        if turn.turn_index != expected {
            return Err(SequenceError { expected, got: turn.turn_index });
        }
        let mut next = self.clone();
        let mut salient: Vec<String> = Vec::new();
        for e in &turn.parsed.entities {
            if !salient.contains(&e.entity_id) {
                salient.push(e.entity_id.clone());
            }
        }
        for id in &self.salient_entities {
            if !salient.contains(id) {
                salient.push(id.clone());
            }
        }
        salient.truncate(self.depth);
        next.salient_entities = salient;
        next.last_scope = Some(turn.parsed.scope.clone());
        if let Some(stat) = turn.parsed.stat_keys.first() {
            next.last_stat = Some(stat.clone());
        }
        next.turns.push(turn);
        Ok(next)
    }

    pub fn referents(&self) -> &[String] {
        &self.salient_entities
    }

    pub fn turn(&self, turn_index: u32) -> Option<&Turn> {
        self.turns.iter().find(|t| t.turn_index == turn_index)
    }

    pub fn turn_mut(&mut self, turn_index: u32) -> Option<&mut Turn> {
        self.turns.iter_mut().find(|t| t.turn_index == turn_index)
    }
}

/// Whether `prompt` leans on earlier turns, and the rule that decided it.
pub fn is_followup(prompt: &str, state: &ConversationState, catalog: &Catalog) -> (bool, &'static str) {
    if state.is_fresh() {
        return (false, "first turn");
    }
    let tokens = tokenize(prompt);
    let starts_with_marker = DISCOURSE_MARKERS.iter().any(|m| {
        let phrase = tokenize(m);
        tokens.len() >= phrase.len() && tokens[..phrase.len()] == phrase[..]
    });
    if starts_with_marker {
        return (true, "discourse marker");
    }
    if PRONOUNS.iter().any(|p| find_phrase(&tokens, &[p.to_string()]).is_some()) {
        return (true, "pronoun");
    }
    if catalog.spot_mentions(&tokens).is_empty() {
        return (true, "no entities");
    }
    (false, "standalone")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{CatalogRecord, EntityKind, EntityRecord};
    use crate::interpreter::{Intent, ParsedQuery};
    use alloc::collections::BTreeSet;
    use alloc::vec;
    use proptest::prelude::*;

    fn entity(id: &str, name: &str) -> EntityRecord {
        EntityRecord {
            entity_id: id.into(),
            kind: EntityKind::Player,
            canonical_name: name.into(),
            aliases: name.rsplit(' ').next().map(|s| s.to_lowercase()).into_iter().collect(),
            position: Some("QB".into()),
            abbreviation: None,
            affiliations: vec![],
        }
    }

    fn catalog() -> Catalog {
        Catalog::from_records(vec![
            CatalogRecord::Entity(entity("p_mahomes", "Patrick Mahomes")),
            CatalogRecord::Entity(entity("p_purdy", "Brock Purdy")),
            CatalogRecord::Entity(entity("p_richardson", "Anthony Richardson")),
        ])
        .unwrap()
    }

    fn turn(i: u32, entities: &[EntityRecord]) -> Turn {
        Turn {
            turn_index: i,
            user_prompt: "q".into(),
            parsed: ParsedQuery {
                intent: Intent::StatLookup,
                entities: entities.to_vec(),
                stat_keys: vec!["pass_yards".into()],
                scope: Scope::through(2024, 10).unwrap(),
                raw_prompt: "q".into(),
                inherited: BTreeSet::new(),
                pattern_id: "stat.lookup".into(),
                context_terms: vec![],
            },
            answer_digest: String::new(),
            feedback: None,
        }
    }

    #[test]
    fn prompt_order_then_recency() {
        let (m, p, r) = (
            entity("p_mahomes", "Patrick Mahomes"),
            entity("p_purdy", "Brock Purdy"),
            entity("p_richardson", "Anthony Richardson"),
        );
        let s = ConversationState::new("c").record_turn(turn(1, &[m.clone(), p.clone()])).unwrap();
        assert_eq!(s.referents(), ["p_mahomes", "p_purdy"]);
        let s = s.record_turn(turn(2, std::slice::from_ref(&r))).unwrap();
        assert_eq!(s.referents(), ["p_richardson", "p_mahomes", "p_purdy"]);
        let s = s.record_turn(turn(3, &[p])).unwrap();
        assert_eq!(s.referents(), ["p_purdy", "p_richardson", "p_mahomes"]);
        assert_eq!(s.last_stat.as_deref(), Some("pass_yards"));
    }

    #[test]
    fn out_of_order_turn() {
        let s = ConversationState::new("c");
        assert!(s.referents().is_empty());
        assert_eq!(s.record_turn(turn(2, &[])), Err(SequenceError { expected: 1, got: 2 }));
    }

    #[test]
    fn followup_rules() {
        let c = catalog();
        let fresh = ConversationState::new("c");
        assert_eq!(
            is_followup("Who has more passing yards this season mahomes or purdy?", &fresh, &c),
            (false, "first turn")
        );
        let s = fresh.record_turn(turn(1, &[entity("p_mahomes", "Patrick Mahomes")])).unwrap();
        assert_eq!(is_followup("But who has more passing TDs?", &s, &c), (true, "discourse marker"));
        assert_eq!(is_followup("What about Purdy?", &s, &c), (true, "discourse marker"));
        assert_eq!(is_followup("What is his market cap?", &s, &c), (true, "pronoun"));
        assert_eq!(is_followup("Who is better?", &s, &c), (true, "no entities"));
        assert_eq!(is_followup("Is Purdy good?", &s, &c), (false, "standalone"));
    }

    proptest! {
        #[test]
        fn salience_is_bounded_and_unique(picks in prop::collection::vec(prop::collection::vec(0usize..12, 0..4), 1..15)) {
            let pool: Vec<EntityRecord> = (0..12).map(|i| entity(&alloc::format!("p{i}"), &alloc::format!("Player {i}"))).collect();
            let mut s = ConversationState::new("c");
            for (i, pick) in picks.iter().enumerate() {
                let ents: Vec<_> = pick.iter().map(|&j| pool[j].clone()).collect();
                s = s.record_turn(turn(i as u32 + 1, &ents)).unwrap();
                if let Some(first) = ents.first() {
                    prop_assert_eq!(&s.salient_entities[0], &first.entity_id);
                }
            }
            prop_assert!(s.salient_entities.len() <= DEFAULT_SALIENCE_DEPTH);
            let unique: BTreeSet<_> = s.salient_entities.iter().collect();
            prop_assert_eq!(unique.len(), s.salient_entities.len());
        }

        #[test]
        fn replay_is_deterministic(picks in prop::collection::vec(prop::collection::vec(0usize..5, 0..3), 1..8)) {
            let pool: Vec<EntityRecord> = (0..5).map(|i| entity(&alloc::format!("p{i}"), &alloc::format!("Player {i}"))).collect();
            let run = || {
                let mut s = ConversationState::new("c");
                for (i, pick) in picks.iter().enumerate() {
                    let ents: Vec<_> = pick.iter().map(|&j| pool[j].clone()).collect();
                    s = s.record_turn(turn(i as u32 + 1, &ents)).unwrap();
                }
                s
            };
            prop_assert_eq!(run(), run());
        }
    }
}
