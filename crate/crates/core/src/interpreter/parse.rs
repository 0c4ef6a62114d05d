use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::catalog::{Catalog, EntityKind, EntityRecord, FieldMatch, Scope};
use crate::memory::{is_followup, ConversationState};
use crate::text::{find_phrase, parse_years, tokenize, years_in};
use crate::value::Scalar;
use crate::SeasonClock;

use super::{
    AugmentedPrompt, Comparator, Grammar, InheritedField, Intent, IntentKind, Lexicon, ParseError, ParsedQuery,
    Pattern, PatternHint, Side, StatRule,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("grammar has no patterns")]
    EmptyGrammar,
    #[error("duplicate pattern id {0}")]
    DuplicatePattern(String),
    #[error("pattern {0} has an empty phrase")]
    EmptyPhrase(String),
    #[error("clock week {0} is outside 1..=22")]
    InvalidClock(u8),
}

/// Compiles prompts into [`ParsedQuery`] values.
#[derive(Debug, Clone)]
pub struct Interpreter {
    lexicon: Lexicon,
    grammar: Grammar,
    clock: SeasonClock,
    home_team: Option<String>,
    key_phrases: Vec<(Vec<String>, String)>,
    known_words: BTreeSet<String>,
}

/// A span of prompt tokens bound to something.
#[derive(Debug, Clone)]
struct Span {
    start: usize,
    len: usize,
}

impl Span {
    fn overlaps(&self, other: &Span) -> bool {
        self.start < other.start + other.len && other.start < self.start + self.len
    }
    fn end(&self) -> usize {
        self.start + self.len
    }
}

struct Analysis<'c> {
    tokens: Vec<String>,
    /// Explicit entity mentions in prompt order.
    mentions: Vec<(Span, &'c EntityRecord)>,
    stat_keys: Vec<String>,
    stat_spans: Vec<Span>,
    domain_terms: Vec<String>,
    followup: bool,
    followup_reason: &'static str,
}

impl Interpreter {
    pub fn new(lexicon: Lexicon, grammar: Grammar, clock: SeasonClock) -> Result<Self, ConfigError> {
        if grammar.patterns.is_empty() {
            return Err(ConfigError::EmptyGrammar);
        }
        if !(1..=22).contains(&clock.week) {
            return Err(ConfigError::InvalidClock(clock.week));
        }
        let mut ids = BTreeSet::new();
        for p in &grammar.patterns {
            if !ids.insert(p.id.clone()) {
                return Err(ConfigError::DuplicatePattern(p.id.clone()));
            }
            if p.any_of.iter().flatten().chain(&p.none_of).any(|ph| tokenize(ph).is_empty()) {
                return Err(ConfigError::EmptyPhrase(p.id.clone()));
            }
        }
        let key_phrases = lexicon.key_phrases();
        let mut known_words: BTreeSet<String> = lexicon.stopwords.iter().cloned().collect();
        let phrase_sources = grammar
            .patterns
            .iter()
            .flat_map(|p| p.any_of.iter().flatten().chain(&p.none_of))
            .chain(lexicon.comparators.keys())
            .chain(lexicon.conferences.keys())
            .chain(lexicon.play_filters.keys())
            .chain(&lexicon.first_person)
            .chain(&lexicon.side_words.offense)
            .chain(&lexicon.side_words.defense)
            .chain(&lexicon.deixis.current_season)
            .chain(&lexicon.deixis.previous_season)
            .chain(&lexicon.deixis.last_game)
            .chain(&lexicon.context_topics);
        for phrase in phrase_sources {
            known_words.extend(tokenize(phrase));
        }
        for (phrase, _) in &key_phrases {
            known_words.extend(phrase.iter().cloned());
        }
        Ok(Interpreter { lexicon, grammar, clock, home_team: None, key_phrases, known_words })
    }

    /// Team that "our" and "we" refer to.
    pub fn with_home_team(mut self, team_id: Option<String>) -> Self {
        self.home_team = team_id;
        self
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn clock(&self) -> SeasonClock {
        self.clock
    }

    /// Resolves deixis against the clock and attaches memory referents for follow-ups.
    pub fn augment(&self, prompt: &str, state: &ConversationState, catalog: &Catalog) -> AugmentedPrompt {
        let tokens = tokenize(prompt);
        let (followup, _) = self.followup(prompt, &tokens, state, catalog);
        let injected_scope = match (self.explicit_scope(&tokens).0, &state.last_scope) {
            (Some(s), _) => s,
            (None, Some(last)) if followup => last.clone(),
            _ => self.default_scope(),
        };
        let injected_context = if followup {
            state
                .referents()
                .iter()
                .filter_map(|id| catalog.entity(id))
                .take(2)
                .map(|e| {
                    let mut text = e.canonical_name.clone();
                    let team = e.team_in(injected_scope.season).and_then(|t| catalog.entity(t));
                    match (&e.position, team) {
                        (Some(p), Some(t)) => text.push_str(&format!(", {p}, {}", t.canonical_name)),
                        (Some(p), None) => text.push_str(&format!(", {p}")),
                        (None, Some(t)) => text.push_str(&format!(", {}", t.canonical_name)),
                        (None, None) => {}
                    }
                    ("referent".to_string(), text)
                })
                .collect()
        } else {
            Vec::new()
        };
        AugmentedPrompt { original: prompt.to_string(), injected_scope, injected_context, clock: self.clock }
    }

    /// [`is_followup`], except that a home-team word ("our", "we") names an
    /// entity, so such a prompt stands alone.
    fn followup(
        &self,
        prompt: &str,
        tokens: &[String],
        state: &ConversationState,
        catalog: &Catalog,
    ) -> (bool, &'static str) {
        let (followup, reason) = is_followup(prompt, state, catalog);
        let home = self.home_team.as_deref().and_then(|id| catalog.entity(id)).is_some()
            && tokens.iter().any(|t| self.lexicon.first_person.contains(t));
        if followup && reason == "no entities" && home {
            return (false, "home team");
        }
        (followup, reason)
    }

    fn default_scope(&self) -> Scope {
        Scope { season: self.clock.season, through_week: Some(self.clock.week), game_filter: Vec::new() }
    }

    fn has_phrase(tokens: &[String], phrase: &str) -> bool {
        find_phrase(tokens, &tokenize(phrase)).is_some()
    }

    fn analyze<'c>(&self, prompt: &str, state: &ConversationState, catalog: &'c Catalog) -> Analysis<'c> {
        let tokens = tokenize(prompt);
        let mut mentions: Vec<(Span, &'c EntityRecord)> = Vec::new();
        for m in catalog.spot_mentions(&tokens) {
            // several entities sharing an alias: keep the first by catalog tie order
            let mut candidates: Vec<&EntityRecord> = m.entity_ids.iter().filter_map(|id| catalog.entity(id)).collect();
            candidates.sort_by(|a, b| a.canonical_name.cmp(&b.canonical_name).then(a.entity_id.cmp(&b.entity_id)));
            if let Some(e) = candidates.first() {
                mentions.push((Span { start: m.start, len: m.len }, e));
            }
        }
        if let Some(home) = self.home_team.as_deref().and_then(|id| catalog.entity(id)) {
            for (i, tok) in tokens.iter().enumerate() {
                if self.lexicon.first_person.contains(tok)
                    && !mentions.iter().any(|(_, e)| e.entity_id == home.entity_id)
                {
                    mentions.push((Span { start: i, len: 1 }, home));
                }
            }
        }
        mentions.sort_by_key(|(s, _)| s.start);

        let mut stat_keys: Vec<String> = Vec::new();
        let mut stat_spans: Vec<Span> = Vec::new();
        for (phrase, key) in &self.key_phrases {
            if !catalog.knows_key(key) {
                continue;
            }
            let mut from = 0;
            while from + phrase.len() <= tokens.len() {
                let Some(pos) = find_phrase(&tokens[from..], phrase) else { break };
                let span = Span { start: from + pos, len: phrase.len() };
                let clash =
                    stat_spans.iter().any(|s| s.overlaps(&span)) || mentions.iter().any(|(m, _)| m.overlaps(&span));
                if !clash {
                    stat_spans.push(span);
                    stat_keys.push(key.clone());
                }
                from += pos + 1;
            }
        }
        // prompt order
        let mut keyed: Vec<(usize, String)> = stat_spans.iter().map(|s| s.start).zip(stat_keys).collect();
        keyed.sort_by_key(|(s, _)| *s);
        let mut stat_keys = Vec::new();
        for (_, k) in keyed {
            if !stat_keys.contains(&k) {
                stat_keys.push(k);
            }
        }
        stat_spans.sort_by_key(|s| s.start);

        let domain_terms =
            self.lexicon.context_topics.iter().filter(|t| Self::has_phrase(&tokens, t)).cloned().collect();
        let (followup, followup_reason) = self.followup(prompt, &tokens, state, catalog);
        Analysis { tokens, mentions, stat_keys, stat_spans, domain_terms, followup, followup_reason }
    }

    fn pattern_matches(&self, p: &Pattern, a: &Analysis<'_>, state: &ConversationState) -> bool {
        let fires =
            p.any_of.is_empty() || p.any_of.iter().any(|alt| alt.iter().all(|ph| Self::has_phrase(&a.tokens, ph)));
        let blocked = p.none_of.iter().any(|ph| Self::has_phrase(&a.tokens, ph));
        let stat_ok = match p.stat {
            StatRule::Any => true,
            StatRule::Required => !a.stat_keys.is_empty(),
            StatRule::Forbidden => a.stat_keys.is_empty(),
        };
        let followup_ok = !p.needs_followup || (a.followup && !state.is_fresh());
        let domain_ok = !p.needs_domain_term || !a.domain_terms.is_empty() || !a.mentions.is_empty();
        fires && !blocked && stat_ok && followup_ok && domain_ok
    }

    fn nearest(&self, tokens: &[String]) -> Vec<PatternHint> {
        let mut scored: Vec<(f64, usize)> = self
            .grammar
            .patterns
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let best = p
                    .any_of
                    .iter()
                    .filter(|alt| !alt.is_empty())
                    .map(|alt| alt.iter().filter(|ph| Self::has_phrase(tokens, ph)).count() as f64 / alt.len() as f64)
                    .fold(0.0, f64::max);
                (best, i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored
            .into_iter()
            .take(3)
            .map(|(_, i)| {
                let p = &self.grammar.patterns[i];
                PatternHint { id: p.id.clone(), example: p.example.clone() }
            })
            .collect()
    }

    /// Runs of content tokens not claimed by any mention, stat phrase or known word.
    fn leftover_runs(&self, a: &Analysis<'_>) -> Vec<String> {
        let claimed = |i: usize| {
            a.mentions.iter().any(|(s, _)| s.start <= i && i < s.end())
                || a.stat_spans.iter().any(|s| s.start <= i && i < s.end())
        };
        let mut runs = Vec::new();
        let mut cur: Vec<&str> = Vec::new();
        for (i, tok) in a.tokens.iter().enumerate() {
            let free = !claimed(i)
                && !self.known_words.contains(tok)
                && parse_years(tok).is_none()
                && !tok.chars().all(|c| c.is_ascii_digit() || c == '-' || c == '.');
            if free {
                cur.push(tok);
            } else if !cur.is_empty() {
                runs.push(cur.join(" "));
                cur.clear();
            }
        }
        if !cur.is_empty() {
            runs.push(cur.join(" "));
        }
        runs
    }

    /// Explicit scope from years and deictic phrases, if the prompt has any.
    fn explicit_scope(&self, tokens: &[String]) -> (Option<Scope>, Vec<u16>) {
        let years = years_in(tokens);
        let d = &self.lexicon.deixis;
        let any = |phrases: &[String]| phrases.iter().any(|p| Self::has_phrase(tokens, p));
        let mut scope = if let Some(&last) = years.last() {
            Some(Scope {
                season: last,
                through_week: (last == self.clock.season).then_some(self.clock.week),
                game_filter: Vec::new(),
            })
        } else if any(&d.last_game) || any(&d.current_season) {
            Some(self.default_scope())
        } else if any(&d.previous_season) {
            Some(Scope::season(self.clock.season.saturating_sub(1)))
        } else {
            None
        };
        if any(&d.last_game) {
            if let Some(s) = scope.as_mut() {
                s.game_filter.push(FieldMatch { field: "week".into(), value: Scalar::Int(i64::from(self.clock.week)) });
            }
        }
        (scope, years)
    }

    fn prompt_filters(&self, tokens: &[String]) -> Vec<FieldMatch> {
        let mut out = Vec::new();
        for (word, value) in &self.lexicon.conferences {
            if Self::has_phrase(tokens, word) {
                out.push(FieldMatch {
                    field: self.lexicon.conference_field.clone(),
                    value: Scalar::text(value.clone()),
                });
            }
        }
        for (phrase, filter) in &self.lexicon.play_filters {
            if Self::has_phrase(tokens, phrase) && !out.contains(filter) {
                out.push(filter.clone());
            }
        }
        out
    }

    fn comparator(&self, tokens: &[String]) -> Comparator {
        tokens.iter().find_map(|t| self.lexicon.comparators.get(t).copied()).unwrap_or(Comparator::More)
    }

    fn known_keys(&self, keys: &[String], catalog: &Catalog) -> Vec<String> {
        keys.iter().filter(|k| catalog.knows_key(k)).cloned().collect()
    }

    /// Interprets `prompt` in the context of `state`.
    pub fn parse(&self, prompt: &str, state: &ConversationState, catalog: &Catalog) -> Result<ParsedQuery, ParseError> {
        let a = self.analyze(prompt, state, catalog);
        let unparseable = || ParseError::Unparseable { prompt: prompt.to_string(), nearest: self.nearest(&a.tokens) };
        if a.tokens.is_empty() {
            return Err(unparseable());
        }
        let pattern =
            self.grammar.patterns.iter().find(|p| self.pattern_matches(p, &a, state)).ok_or_else(unparseable)?;

        let mut inherited = BTreeSet::new();
        let (explicit, years) = self.explicit_scope(&a.tokens);
        let mut scope = match explicit {
            Some(s) => s,
            None => match (&state.last_scope, a.followup) {
                (Some(last), true) => {
                    inherited.insert(InheritedField::Scope);
                    last.clone()
                }
                _ => self.default_scope(),
            },
        };
        let own = self.prompt_filters(&a.tokens);
        if !own.is_empty() && inherited.contains(&InheritedField::Scope) {
            // filters belong to the question asked; the carried scope keeps only its season and week
            scope.game_filter.clear();
        }
        for f in own {
            if !scope.game_filter.contains(&f) {
                scope.game_filter.push(f);
            }
        }

        let mut b = Builder { interp: self, a: &a, state, catalog, inherited, pattern };

        let kind = match pattern.intent.kind() {
            Some(k) => k,
            None => {
                return b.carry_previous(scope, &years);
            }
        };

        let explicit_entities: Vec<EntityRecord> = a.mentions.iter().map(|(_, e)| (*e).clone()).collect();
        let (intent, entities, stat_keys, context_terms) = match kind {
            IntentKind::StatLookup => {
                let entities = b.fill(explicit_entities, 1, None, false)?;
                let terms = a.domain_terms.clone();
                (Intent::StatLookup, entities, a.stat_keys.clone(), terms)
            }
            IntentKind::StatComparison => {
                let entities = b.fill(explicit_entities, 2, None, false)?;
                let keys = a.stat_keys.iter().take(1).cloned().collect();
                (Intent::StatComparison { comparator: self.comparator(&a.tokens) }, entities, keys, Vec::new())
            }
            IntentKind::MetricVerdict => {
                let entities = b.fill(explicit_entities, 2, None, true)?;
                let position = entities[0].position.as_deref().filter(|p| Some(*p) == entities[1].position.as_deref());
                let metrics = self.known_keys(self.lexicon.verdict_metrics_for(position), catalog);
                if metrics.is_empty() {
                    return Err(ParseError::MissingContext { needed: "verdict metrics".into() });
                }
                (Intent::MetricVerdict { metrics: metrics.clone() }, entities, metrics, Vec::new())
            }
            IntentKind::RecordQuery => {
                let players: Vec<EntityRecord> =
                    explicit_entities.into_iter().filter(|e| e.kind == EntityKind::Player).collect();
                let entities = b.fill(players, 1, Some(EntityKind::Player), true)?;
                let seasons = if years.is_empty() { alloc::vec![scope.season] } else { years.clone() };
                (Intent::RecordQuery { seasons }, entities, Vec::new(), Vec::new())
            }
            IntentKind::TeamWeakness => {
                let teams: Vec<EntityRecord> =
                    explicit_entities.into_iter().filter(|e| e.kind == EntityKind::Team).collect();
                let entities = b.fill(teams, 1, Some(EntityKind::Team), true)?;
                let side = self.side_anywhere(&a.tokens).unwrap_or(Side::Offense);
                let metrics = match side {
                    Side::Offense => &self.lexicon.weakness_metrics.offense,
                    Side::Defense => &self.lexicon.weakness_metrics.defense,
                };
                let keys = self.known_keys(metrics, catalog);
                if keys.is_empty() {
                    return Err(ParseError::MissingContext { needed: "weakness metrics".into() });
                }
                (Intent::TeamWeakness { side }, entities, keys, Vec::new())
            }
            IntentKind::TeamMismatch => {
                let team_mentions: Vec<(Span, &EntityRecord)> =
                    a.mentions.iter().filter(|(_, e)| e.kind == EntityKind::Team).cloned().collect();
                let teams: Vec<EntityRecord> = team_mentions.iter().map(|(_, e)| (*e).clone()).collect();
                let entities = b.fill(teams, 2, Some(EntityKind::Team), true)?;
                let sides: Vec<Option<Side>> = entities
                    .iter()
                    .map(|e| {
                        team_mentions
                            .iter()
                            .find(|(_, m)| m.entity_id == e.entity_id)
                            .and_then(|(span, _)| self.side_after(&a.tokens, span.end()))
                    })
                    .collect();
                let offense_first =
                    !matches!((sides[0], sides[1]), (Some(Side::Defense), _) | (_, Some(Side::Offense)));
                let (off, def) = if offense_first { (0, 1) } else { (1, 0) };
                let mut keys = Vec::new();
                for (o, d) in &self.lexicon.mismatch_pairs {
                    if catalog.knows_key(o) && catalog.knows_key(d) {
                        keys.push(o.clone());
                        keys.push(d.clone());
                    }
                }
                if keys.is_empty() {
                    return Err(ParseError::MissingContext { needed: "mismatch metric pairs".into() });
                }
                let intent = Intent::TeamMismatch {
                    offense: entities[off].entity_id.clone(),
                    defense: entities[def].entity_id.clone(),
                };
                (intent, entities, keys, Vec::new())
            }
            IntentKind::RosterBuild => {
                let metric = self.lexicon.roster.metric.clone();
                if !catalog.knows_key(&metric) {
                    return Err(ParseError::MissingContext { needed: "roster metric".into() });
                }
                let week = scope.through_week.unwrap_or(self.lexicon.final_week);
                scope.through_week = Some(week);
                let intent = Intent::RosterBuild {
                    positions: self.lexicon.roster.positions.clone(),
                    metric: metric.clone(),
                    week,
                };
                (intent, Vec::new(), alloc::vec![metric], Vec::new())
            }
            IntentKind::CapQuery => {
                let players: Vec<EntityRecord> =
                    explicit_entities.iter().filter(|e| e.kind == EntityKind::Player).cloned().collect();
                let mut entities = b.fill(players, 1, Some(EntityKind::Player), true)?;
                let player = entities[0].clone();
                let explicit_team = explicit_entities.iter().find(|e| e.kind == EntityKind::Team).cloned();
                let stat = pattern.params.get("stat").cloned().unwrap_or_else(|| "cap_hit".into());
                if !catalog.knows_key(&stat) {
                    return Err(ParseError::MissingContext { needed: "cap stat".into() });
                }
                let team_id = explicit_team
                    .as_ref()
                    .map(|t| t.entity_id.clone())
                    .or_else(|| player.team_in(scope.season).map(str::to_string));
                let years = if !years.is_empty() {
                    years.clone()
                } else if pattern.params.get("years").map(String::as_str) == Some("contract") {
                    match team_id.as_deref().and_then(|t| player.affiliation_with(t)) {
                        Some(aff) => (aff.season_start..=aff.season_end).collect(),
                        None => alloc::vec![scope.season],
                    }
                } else {
                    alloc::vec![scope.season]
                };
                if let Some(team) = explicit_team {
                    entities.push(team);
                }
                (Intent::CapQuery { years }, entities, alloc::vec![stat], Vec::new())
            }
            IntentKind::ContextSearch => {
                let entities = if explicit_entities.is_empty() && a.followup && a.followup_reason == "pronoun" {
                    b.fill(Vec::new(), 1, None, true).unwrap_or_default()
                } else {
                    explicit_entities
                };
                (Intent::ContextSearch, entities, Vec::new(), self.content_terms(&a))
            }
            IntentKind::VideoLookup => {
                let entities = b.fill(explicit_entities, 1, None, false)?;
                (Intent::VideoLookup, entities, a.stat_keys.clone(), self.content_terms(&a))
            }
        };

        Ok(ParsedQuery {
            intent,
            entities,
            stat_keys,
            scope,
            raw_prompt: prompt.to_string(),
            inherited: b.inherited,
            pattern_id: pattern.id.clone(),
            context_terms,
        })
    }

    fn side_of(&self, tok: &str) -> Option<Side> {
        if self.lexicon.side_words.offense.iter().any(|w| w == tok) {
            Some(Side::Offense)
        } else if self.lexicon.side_words.defense.iter().any(|w| w == tok) {
            Some(Side::Defense)
        } else {
            None
        }
    }

    fn side_anywhere(&self, tokens: &[String]) -> Option<Side> {
        tokens.iter().find_map(|t| self.side_of(t))
    }

    /// Side word within two tokens after a team mention ("Vikings' defense").
    fn side_after(&self, tokens: &[String], end: usize) -> Option<Side> {
        tokens.iter().skip(end).take(2).find_map(|t| self.side_of(t))
    }

    /// Non-stopword tokens outside entity mentions, for unstructured search.
    fn content_terms(&self, a: &Analysis<'_>) -> Vec<String> {
        a.tokens
            .iter()
            .enumerate()
            .filter(|(i, t)| {
                !self.lexicon.stopwords.contains(*t)
                    && !self.lexicon.first_person.contains(t)
                    && !a.mentions.iter().any(|(s, _)| s.start <= *i && *i < s.end())
            })
            .map(|(_, t)| t.clone())
            .collect()
    }
}

struct Builder<'i, 'a, 'c> {
    interp: &'i Interpreter,
    a: &'a Analysis<'c>,
    state: &'a ConversationState,
    catalog: &'c Catalog,
    inherited: BTreeSet<InheritedField>,
    pattern: &'i Pattern,
}

impl Builder<'_, '_, '_> {
    /// Tops `have` up to `need` entities: first from leftover words that resolve
    /// in the catalog, then from dialogue memory when the prompt is a follow-up.
    /// With `exact`, extra explicit entities are dropped.
    fn fill(
        &mut self,
        mut have: Vec<EntityRecord>,
        need: usize,
        kind: Option<EntityKind>,
        exact: bool,
    ) -> Result<Vec<EntityRecord>, ParseError> {
        let mut unresolved: Option<String> = None;
        if have.len() < need {
            for run in self.interp.leftover_runs(self.a) {
                match self.catalog.resolve_entity(&run, kind) {
                    Ok(matches) => {
                        let e = matches[0].entity;
                        if have.len() < need && !have.iter().any(|h| h.entity_id == e.entity_id) {
                            have.push(e.clone());
                        }
                    }
                    Err(_) => {
                        unresolved.get_or_insert(run);
                    }
                }
            }
        }
        if have.len() < need && self.a.followup {
            let mut added = false;
            for id in &self.state.salient_entities {
                if have.len() >= need {
                    break;
                }
                let Some(e) = self.catalog.entity(id) else { continue };
                if kind.is_some_and(|k| e.kind != k) || have.iter().any(|h| h.entity_id == e.entity_id) {
                    continue;
                }
                have.push(e.clone());
                added = true;
            }
            if added {
                self.inherited.insert(InheritedField::Entities);
            }
        }
        if have.len() < need {
            return Err(match unresolved {
                Some(mention) => ParseError::UnresolvedEntity { mention },
                None => ParseError::MissingContext {
                    needed: match kind {
                        Some(EntityKind::Team) => "team".into(),
                        Some(EntityKind::Player) => "player".into(),
                        None => "entities".into(),
                    },
                },
            });
        }
        if exact {
            have.truncate(need);
        }
        Ok(have)
    }

    /// Re-asks the previous turn's question with whatever the prompt changed.
    fn carry_previous(mut self, mut scope: Scope, years: &[u16]) -> Result<ParsedQuery, ParseError> {
        let prev = self
            .state
            .turns
            .last()
            .map(|t| t.parsed.clone())
            .ok_or_else(|| ParseError::MissingContext { needed: "previous question".into() })?;
        let explicit: Vec<EntityRecord> = self.a.mentions.iter().map(|(_, e)| (*e).clone()).collect();
        if explicit.is_empty() {
            if let Some(mention) = self.interp.leftover_runs(self.a).into_iter().next() {
                if self.catalog.resolve_entity(&mention, None).is_err() {
                    return Err(ParseError::UnresolvedEntity { mention });
                }
            }
        }
        let mut entities = explicit.clone();
        let arity = prev.entities.len().max(1);
        for e in &prev.entities {
            if entities.len() >= arity {
                break;
            }
            if !entities.iter().any(|x| x.entity_id == e.entity_id) {
                entities.push(e.clone());
                self.inherited.insert(InheritedField::Entities);
            }
        }
        if entities.is_empty() {
            return Err(ParseError::MissingContext { needed: "entities".into() });
        }
        let stat_keys = if self.a.stat_keys.is_empty() {
            if !prev.stat_keys.is_empty() {
                self.inherited.insert(InheritedField::StatKeys);
            }
            prev.stat_keys.clone()
        } else {
            self.a.stat_keys.clone()
        };
        let mut intent = prev.intent.clone();
        match &mut intent {
            Intent::RecordQuery { seasons } if !years.is_empty() => *seasons = years.to_vec(),
            Intent::CapQuery { years: y } if !years.is_empty() => *y = years.to_vec(),
            Intent::TeamMismatch { offense, defense } if entities.len() >= 2 => {
                *offense = entities[0].entity_id.clone();
                *defense = entities[1].entity_id.clone();
            }
            Intent::RosterBuild { week, .. } => {
                *week = scope.through_week.unwrap_or(self.interp.lexicon.final_week);
                scope.through_week = Some(*week);
            }
            _ => {}
        }
        Ok(ParsedQuery {
            intent,
            entities,
            stat_keys,
            scope,
            raw_prompt: self.a.tokens.join(" "),
            inherited: self.inherited,
            pattern_id: self.pattern.id.clone(),
            context_terms: prev.context_terms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::CatalogRecord;
    use crate::interpreter::explain_parse;
    use crate::memory::Turn;
    use alloc::vec;
    use proptest::prelude::*;

    pub(crate) fn fixture_catalog() -> Catalog {
        let text = include_str!("../../../../fixtures/catalog.jsonl");
        let records: Vec<CatalogRecord> =
            text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).unwrap()).collect();
        Catalog::from_records(records).unwrap()
    }

    pub(crate) fn fixture_interpreter() -> Interpreter {
        let lexicon: Lexicon = serde_json::from_str(include_str!("../../../../fixtures/lexicon.json")).unwrap();
        let grammar: Grammar = serde_json::from_str(include_str!("../../../../fixtures/grammar.json")).unwrap();
        Interpreter::new(lexicon, grammar, SeasonClock { season: 2024, week: 10 })
            .unwrap()
            .with_home_team(Some("t_min".into()))
    }

    fn converse(prompts: &[&str]) -> Vec<ParsedQuery> {
        let (interp, catalog) = (fixture_interpreter(), fixture_catalog());
        let mut state = ConversationState::new("t");
        let mut out = Vec::new();
        for p in prompts {
            let parsed = interp.parse(p, &state, &catalog).unwrap_or_else(|e| panic!("{p}: {e:?}"));
            let turn = Turn {
                turn_index: state.next_turn_index(),
                user_prompt: p.to_string(),
                parsed: parsed.clone(),
                answer_digest: String::new(),
                feedback: None,
            };
            state = state.record_turn(turn).unwrap();
            out.push(parsed);
        }
        out
    }

    fn ids(p: &ParsedQuery) -> Vec<&str> {
        p.entity_ids()
    }

    #[test]
    fn passing_conversation() {
        let turns = converse(&[
            "Who has more passing yards this season mahomes or purdy?",
            "But who has more passing TDs?",
            "Okay, so who is better?",
        ]);
        assert_eq!(turns[0].intent, Intent::StatComparison { comparator: Comparator::More });
        assert_eq!(ids(&turns[0]), ["p_mahomes", "p_purdy"]);
        assert_eq!(turns[0].stat_keys, ["pass_yards"]);
        assert_eq!(turns[0].scope, Scope::through(2024, 10).unwrap());
        assert!(turns[0].inherited.is_empty());

        assert_eq!(turns[1].stat_keys, ["pass_td"]);
        assert_eq!(ids(&turns[1]), ["p_mahomes", "p_purdy"]);
        assert_eq!(turns[1].inherited, [InheritedField::Entities, InheritedField::Scope].into_iter().collect());
        assert!(explain_parse(&turns[1]).contains("inherited: entities, scope"));

        assert_eq!(turns[2].intent.kind(), IntentKind::MetricVerdict);
        assert_eq!(ids(&turns[2]), ["p_mahomes", "p_purdy"]);
        assert_eq!(turns[2].stat_keys.len(), 5);
    }

    #[test]
    fn record_query() {
        let p =
            &converse(&["What was Kirk Cousins' record against AFC teams during the 2021, 2022, and 2023 seasons?"])[0];
        assert_eq!(p.intent, Intent::RecordQuery { seasons: vec![2021, 2022, 2023] });
        assert_eq!(ids(p), ["p_cousins"]);
        assert_eq!(
            p.scope.game_filter,
            vec![FieldMatch { field: "opponent_conference".into(), value: Scalar::text("AFC") }]
        );
    }

    #[test]
    fn team_questions() {
        let turns = converse(&[
            "What is the offensive weakness of the Baltimore Ravens in the 2024 NFL regular season?",
            "What are the mismatches between the Minnesota Vikings' defense and Baltimore Ravens' offense in the 2024 NFL regular season?",
        ]);
        assert_eq!(turns[0].intent, Intent::TeamWeakness { side: Side::Offense });
        assert_eq!(ids(&turns[0]), ["t_bal"]);
        assert_eq!(turns[0].scope.through_week, Some(10));
        assert_eq!(turns[1].intent, Intent::TeamMismatch { offense: "t_bal".into(), defense: "t_min".into() });
    }

    #[test]
    fn front_office_conversation() {
        let turns = converse(&[
            "What is Anthony Richardson's trade value?",
            "What is his market cap?",
            "How much space will that free up for the colts if he leaves?",
        ]);
        assert_eq!(turns[0].intent, Intent::StatLookup);
        assert_eq!(turns[0].stat_keys, ["twar"]);
        assert_eq!(turns[1].intent, Intent::CapQuery { years: vec![2024] });
        assert_eq!(ids(&turns[1]), ["p_richardson"]);
        assert!(turns[1].inherited.contains(&InheritedField::Entities));
        assert_eq!(turns[2].intent, Intent::CapQuery { years: vec![2023, 2024, 2025, 2026, 2027] });
        assert_eq!(ids(&turns[2]), ["p_richardson", "t_ind"]);
        assert_eq!(turns[2].stat_keys, ["cap_savings"]);
    }

    #[test]
    fn roster_and_misc() {
        let p = &converse(&["Build me the perfect team from the 2022 season."])[0];
        match &p.intent {
            Intent::RosterBuild { positions, metric, week } => {
                assert_eq!(positions.len(), 10);
                assert_eq!(metric, "twar");
                assert_eq!(*week, 18);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(p.scope.season, 2022);

        let v = &converse(&["How did Patrick Mahomes perform against Cover 2 in last night's game?"])[0];
        assert_eq!(v.intent, Intent::VideoLookup);
        assert!(v.scope.game_filter.contains(&FieldMatch { field: "coverage".into(), value: Scalar::text("cover_2") }));
        assert!(v.scope.game_filter.contains(&FieldMatch { field: "week".into(), value: Scalar::Int(10) }));

        let s = &converse(&["What was our success rate on outside zone plays in the second half?"])[0];
        assert_eq!(s.intent, Intent::StatLookup);
        assert_eq!(ids(s), ["t_min"]);
        assert_eq!(s.stat_keys, ["success_rate"]);

        let c = &converse(&["Which free agents have excelled in man-to-man coverage over the past two seasons?"])[0];
        assert_eq!(c.intent, Intent::ContextSearch);
        assert!(c.context_terms.contains(&"man-to-man".to_string()));
    }

    #[test]
    fn augment_resolves_scope_and_referents() {
        let (interp, catalog) = (fixture_interpreter(), fixture_catalog());
        let fresh = ConversationState::new("a");
        let a = interp.augment("Who has more passing yards this season mahomes or purdy?", &fresh, &catalog);
        assert_eq!(a.injected_scope, Scope::through(2024, 10).unwrap());
        assert!(a.injected_context.is_empty());
        assert_eq!(a.original, "Who has more passing yards this season mahomes or purdy?");

        let mut state = fresh;
        let first = "What is Anthony Richardson's trade value?";
        let parsed = interp.parse(first, &state, &catalog).unwrap();
        state = state
            .record_turn(Turn {
                turn_index: 1,
                user_prompt: first.into(),
                parsed,
                answer_digest: String::new(),
                feedback: None,
            })
            .unwrap();
        let a = interp.augment("What is his market cap?", &state, &catalog);
        assert_eq!(a.injected_context.len(), 1);
        assert!(a.injected_context[0].1.contains("Anthony Richardson"));
        assert_eq!(a.injected_scope.season, 2024);
    }

    #[test]
    fn own_filters_replace_carried_ones() {
        let turns = converse(&[
            "How did Patrick Mahomes perform against Cover 2 in last night's game?",
            "What was our success rate on outside zone plays in the second half?",
        ]);
        let filter = &turns[1].scope.game_filter;
        assert_eq!(filter.len(), 2, "{filter:?}");
        assert!(filter.iter().all(|f| f.field == "concept" || f.field == "half"));
    }

    #[test]
    fn home_team_prompt_does_not_inherit_scope() {
        let turns = converse(&[
            "Build me the perfect team from the 2022 season.",
            "What was our success rate on outside zone plays in the second half?",
        ]);
        assert_eq!((turns[1].scope.season, turns[1].scope.through_week), (2024, Some(10)));
        assert!(turns[1].inherited.is_empty());
    }

    #[test]
    fn errors() {
        let (interp, catalog) = (fixture_interpreter(), fixture_catalog());
        let fresh = ConversationState::new("e");
        match interp.parse("zxq vvk plmm", &fresh, &catalog) {
            Err(ParseError::Unparseable { nearest, .. }) => assert_eq!(nearest.len(), 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(interp.parse("", &fresh, &catalog), Err(ParseError::Unparseable { .. })));
        assert!(matches!(
            interp.parse("What is his market cap?", &fresh, &catalog),
            Err(ParseError::MissingContext { .. })
        ));
        assert_eq!(
            interp.parse("Who has more passing yards, Zorblax Quint or Mahomes?", &fresh, &catalog),
            Err(ParseError::UnresolvedEntity { mention: "zorblax quint".into() })
        );
    }

    #[test]
    fn explain_lists_pattern() {
        let p = &converse(&["What is Anthony Richardson's trade value?"])[0];
        let text = explain_parse(p);
        assert!(text.contains("pattern: stat.lookup"));
        assert!(text.contains("inherited: none"));
    }

    proptest! {
        #[test]
        fn parse_is_deterministic_and_grounded(words in prop::collection::vec(
            prop::sample::select(vec![
                "who", "has", "more", "passing", "yards", "mahomes", "purdy", "ravens", "vikings", "better",
                "record", "2022", "trade", "value", "his", "market", "cap", "weakness", "offense", "zxq", "cover", "2",
            ]),
            0..10,
        )) {
            let (interp, catalog) = (fixture_interpreter(), fixture_catalog());
            let prompt = words.join(" ");
            let state = ConversationState::new("p");
            let a = interp.parse(&prompt, &state, &catalog);
            let b = interp.parse(&prompt, &state, &catalog);
            prop_assert_eq!(&a, &b);
            if let Ok(p) = a {
                for e in &p.entities {
                    prop_assert!(catalog.entity(&e.entity_id).is_some());
                }
                for k in &p.stat_keys {
                    prop_assert!(catalog.knows_key(k));
                }
            }
        }
    }
}
