//! Deterministic en-US sentence templates.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::format::{decimal2, money, number, ordinal, oxford, thousands};
use super::{AnswerSkeleton, FailureNote, FailureReason, Finding, Generator, Named, RankLine, ScopeView};
use crate::interpreter::Comparator;
use crate::value::Scalar;
use crate::vector::SourceKind;

/// Excerpts quoted per search result list.
const MAX_EXCERPTS: usize = 3;

#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateGenerator;

impl Generator for TemplateGenerator {
    fn name(&self) -> &str {
        "template"
    }

    fn generate(&self, skeleton: &AnswerSkeleton) -> String {
        let mut parts: Vec<String> = skeleton.findings.iter().map(render).filter(|s| !s.is_empty()).collect();
        if !skeleton.failures.is_empty() {
            parts.push(failures(&skeleton.failures, parts.is_empty()));
        }
        if parts.is_empty() {
            return "I could not find any data to answer this question.".into();
        }
        parts.join("\n\n")
    }
}

fn failures(notes: &[FailureNote], nothing_else: bool) -> String {
    let items: Vec<String> = notes
        .iter()
        .map(|n| {
            let why = match n.reason {
                FailureReason::Timeout => "timed out",
                FailureReason::QueueFull => "was not accepted because the agent was busy",
                FailureReason::Error(_) => "could not be retrieved",
            };
            format!("{} ({why})", n.label)
        })
        .collect();
    if nothing_else {
        format!("I could not retrieve the information needed to answer this question: {}.", oxford(&items))
    } else {
        format!("Some information is unavailable: {}.", oxford(&items))
    }
}

fn possessive(name: &str) -> String {
    if name.ends_with('s') {
        format!("{name}'")
    } else {
        format!("{name}'s")
    }
}

fn subject(n: &Named) -> String {
    if n.is_team {
        format!("The {}", n.name)
    } else {
        n.name.clone()
    }
}

fn has(n: &Named) -> &'static str {
    if n.is_team {
        "have"
    } else {
        "has"
    }
}

fn scope_phrase(s: &ScopeView) -> String {
    if s.current {
        "this season".into()
    } else if let Some(w) = s.through_week {
        format!("in {} through week {w}", s.season)
    } else {
        format!("in the {} season", s.season)
    }
}

fn value_text(v: &Scalar, unit: &str) -> String {
    match v {
        Scalar::Null => "no data".into(),
        Scalar::Int(i) if unit == "dollars" => money(*i),
        Scalar::Int(i) => thousands(*i),
        Scalar::Float(f) if unit == "rate" => decimal2(*f),
        Scalar::Float(f) => number(*f),
        other => format!("{other}"),
    }
}

/// "2,454 passing yards" or, for rates, "a success rate of 0.52".
fn amount(v: &Scalar, stat: &str, unit: &str) -> String {
    if v.is_null() {
        format!("no recorded {stat}")
    } else if unit == "rate" {
        format!("a {stat} of {}", value_text(v, unit))
    } else {
        format!("{} {stat}", value_text(v, unit))
    }
}

fn with_qualifiers(base: String, qualifiers: &[String]) -> String {
    if qualifiers.is_empty() {
        base
    } else {
        format!("{base} {}", qualifiers.join(" "))
    }
}

fn render(f: &Finding) -> String {
    match f {
        Finding::Comparison { stat, unit, comparator, values, scope, qualifiers } => {
            comparison(stat, unit, *comparator, values, scope, qualifiers)
        }
        Finding::StatValue { subject: s, stat, unit, value, scope, qualifiers } => {
            let base = format!("{} {} {}", subject(s), has(s), amount(value, stat, unit));
            format!("{} {}.", with_qualifiers(base, qualifiers), scope_phrase(scope))
        }
        Finding::Rank(line) => rank(line),
        Finding::Verdict { sides, winner, wins, ties, role, season, week } => {
            let mut out = format!(
                "Between {} and {}, as of week {week} of the {season} NFL season, ",
                sides[0].name, sides[1].name
            );
            match winner {
                Some(w) => {
                    let l = 1 - w;
                    out.push_str(&format!("{} is the better {role}.", sides[*w].name));
                    if !wins[*w].is_empty() {
                        out.push_str(&format!(
                            " {} ranks higher than {} in {}.",
                            sides[*w].short,
                            sides[l].short,
                            oxford(&wins[*w])
                        ));
                    }
                    if !wins[l].is_empty() {
                        out.push_str(&format!(
                            " However, {} has a higher ranking than {} in {}.",
                            sides[l].short,
                            sides[*w].short,
                            oxford(&wins[l])
                        ));
                    }
                }
                None => {
                    out.push_str(&format!(
                        "neither is clearly the better {role}; they win the same number of metrics."
                    ));
                    for i in 0..2 {
                        if !wins[i].is_empty() {
                            out.push_str(&format!(" {} ranks higher in {}.", sides[i].short, oxford(&wins[i])));
                        }
                    }
                }
            }
            if !ties.is_empty() {
                out.push_str(&format!(" They are ranked the same in {}.", oxford(ties)));
            }
            out
        }
        Finding::Record { player, role, team, seasons, wins, losses, ties, qualifiers } => {
            let mut out = player.name.clone();
            let span = match (seasons.first(), seasons.last()) {
                (Some(a), Some(b)) if a != b => format!(" from {a} to {b}"),
                (Some(a), _) => format!(" in {a}"),
                _ => String::new(),
            };
            match (role, team) {
                (Some(r), Some(t)) => out.push_str(&format!(", {r} for the {t}{span},")),
                (None, Some(t)) => out.push_str(&format!(", playing for the {t}{span},")),
                _ if !span.is_empty() => out.push_str(&format!(",{span},")),
                _ => {}
            }
            let tally = if *ties > 0 { format!("{wins}-{losses}-{ties}") } else { format!("{wins}-{losses}") };
            let base = format!("{out} had a {tally} record");
            format!(
                "{}, considering only regular season games {} was healthy and played.",
                with_qualifiers(base, qualifiers),
                player.short
            )
        }
        Finding::Weakness { team, side, metric, rank, population, season, week } => {
            let m = metric.to_lowercase();
            format!(
                "The {} {} weakness in the {season} NFL regular season, as of week {week}, is their {m}. They are ranked {} out of {population} teams in {m}.",
                possessive(&team.name),
                side.adjective(),
                ordinal(*rank)
            )
        }
        Finding::Mismatch { offense, defense, pairs, season, week } => {
            let mut out = format!(
                "Comparing the {} offense with the {} defense in the {season} NFL regular season, as of week {week}:",
                possessive(&offense.name),
                possessive(&defense.name)
            );
            for p in pairs {
                let edge = if p.offense_rank < p.defense_rank {
                    format!("an advantage for the {} offense", possessive(&offense.short))
                } else if p.offense_rank > p.defense_rank {
                    format!("an advantage for the {} defense", possessive(&defense.short))
                } else {
                    "an even matchup".to_string()
                };
                out.push_str(&format!(
                    " The {} rank {} in {}, while the {} rank {} in {} out of {} teams, {edge}.",
                    offense.short,
                    ordinal(p.offense_rank),
                    p.offense_metric,
                    defense.short,
                    ordinal(p.defense_rank),
                    p.defense_metric,
                    p.population
                ));
            }
            out
        }
        Finding::Cap { player, team, stat_key, stat, rows, missing } => {
            cap(player, team.as_deref(), stat_key, stat, rows, missing)
        }
        Finding::Roster { season, metric, lines } => {
            let mut out = format!("Here is the best roster from the {season} season by {metric}:");
            for l in lines {
                match (&l.name, l.value) {
                    (Some(name), Some(v)) => out.push_str(&format!(
                        "\n{} | {name} | {} | {} {metric} |",
                        l.position,
                        l.team.as_deref().unwrap_or("-"),
                        decimal2(v)
                    )),
                    _ => out.push_str(&format!("\n{} | no ranked player |", l.position)),
                }
            }
            out
        }
        Finding::Plays { subject: s, plays, qualifiers, scope } => {
            let who = with_qualifiers(s.name.clone(), qualifiers);
            if plays.is_empty() {
                return format!("No plays were found for {who} {}.", scope_phrase(scope));
            }
            let mut out = format!("Plays for {who} {}:", scope_phrase(scope));
            for p in plays {
                match &p.description {
                    Some(d) => out.push_str(&format!("\n- {}: {d}", p.play_id)),
                    None => out.push_str(&format!("\n- {}", p.play_id)),
                }
            }
            out
        }
        Finding::Motion { subject: s, traces } => {
            let parts: Vec<String> = traces
                .iter()
                .filter(|t| t.player_id == s.entity_id)
                .map(|t| {
                    format!(
                        "on {} a top speed of {} yards per second and an average of {}",
                        t.play_id,
                        decimal2(t.max_speed),
                        decimal2(t.mean_speed)
                    )
                })
                .collect();
            if parts.is_empty() {
                String::new()
            } else {
                format!("Tracking data for {}: {}.", s.short, parts.join("; "))
            }
        }
        Finding::Excerpts { hits, commentary } => {
            if hits.is_empty() {
                return if *commentary {
                    String::new()
                } else {
                    "No matching articles, reports or commentary were found.".into()
                };
            }
            let intro = if *commentary { "From the broadcast commentary:" } else { "Here is what the sources say:" };
            let mut out = intro.to_string();
            for h in hits.iter().take(MAX_EXCERPTS) {
                let source = match h.source_kind {
                    SourceKind::Article => "article",
                    SourceKind::Transcript => "commentary",
                    SourceKind::Report => "report",
                    SourceKind::Social => "social post",
                };
                out.push_str(&format!("\n- \"{}\" ({source})", h.text));
            }
            out
        }
        Finding::MediaAttached => "Video clips of these plays are linked below.".into(),
    }
}

fn comparison(
    stat: &str,
    unit: &str,
    comparator: Comparator,
    values: &[(Named, Scalar)],
    scope: &ScopeView,
    qualifiers: &[String],
) -> String {
    let when = with_qualifiers(scope_phrase(scope), qualifiers);
    let better = |a: &Scalar, b: &Scalar| -> bool {
        match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => match comparator {
                Comparator::More => x > y,
                Comparator::Fewer => x < y,
            },
            (Some(_), None) => true,
            _ => false,
        }
    };
    let word = match comparator {
        Comparator::More => "more",
        Comparator::Fewer => "fewer",
    };
    let top = values.iter().fold(&values[0], |best, v| if better(&v.1, &best.1) { v } else { best });
    let tied: Vec<&(Named, Scalar)> =
        values.iter().filter(|v| !better(&top.1, &v.1) && !better(&v.1, &top.1)).collect();
    if tied.len() == values.len() {
        let names: Vec<String> = values.iter().map(|v| v.0.name.clone()).collect();
        let lead = if values.len() == 2 { "both" } else { "all" };
        return format!("{} {lead} have {} {when}.", oxford(&names), amount(&top.1, stat, unit));
    }
    if values.len() == 2 {
        let other = values.iter().find(|v| v.0.entity_id != top.0.entity_id).expect("two values");
        return format!(
            "{} {} {word} {stat} {when} than {}. {} has a total of {}, while {} has {}.",
            top.0.name,
            has(&top.0),
            other.0.name,
            top.0.short,
            amount(&top.1, stat, unit),
            other.0.short,
            amount(&other.1, stat, unit)
        );
    }
    let listing: Vec<String> = values.iter().map(|(n, v)| format!("{} {}", n.short, value_text(v, unit))).collect();
    if tied.len() > 1 {
        let names: Vec<String> = tied.iter().map(|v| v.0.name.clone()).collect();
        format!(
            "{} share the {} {stat} {when}: {}.",
            oxford(&names),
            if word == "more" { "most" } else { "fewest" },
            oxford(&listing)
        )
    } else {
        format!(
            "{} has the {} {stat} {when}: {}.",
            top.0.name,
            if word == "more" { "most" } else { "fewest" },
            oxford(&listing)
        )
    }
}

fn rank(l: &RankLine) -> String {
    let name = &l.subject.name;
    let mut intro = subject(&l.subject);
    match (&l.role, &l.team) {
        (Some(r), Some(t)) => intro.push_str(&format!(", a {r} for the {t},")),
        (Some(r), None) => intro.push_str(&format!(", a {r},")),
        _ => {}
    }
    let metric = match &l.short_metric {
        Some(s) if *s != l.metric => format!("{} ({s})", l.metric),
        _ => l.metric.clone(),
    };
    let standing = format!("{} out of {} {}", ordinal(l.rank), l.population, l.population_noun);
    let mut out = match l.value {
        Some(v) => {
            format!("{intro} {} a {metric} of {}, ranking {standing} in the League.", has(&l.subject), decimal2(v))
        }
        None => format!("{intro} {} {standing} in {metric}.", if l.subject.is_team { "rank" } else { "ranks" }),
    };
    if let Some((tier, topic)) = &l.tier {
        out.push_str(&format!(
            " This places {} {topic} in the {} tier among {}.",
            possessive(if l.subject.is_team { name } else { &l.subject.short }),
            tier.word(),
            l.population_noun
        ));
    }
    out
}

fn cap(player: &Named, team: Option<&str>, stat_key: &str, stat: &str, rows: &[(u16, i64)], missing: &[u16]) -> String {
    let missing_years: Vec<String> = missing.iter().map(|y| y.to_string()).collect();
    if rows.is_empty() {
        return format!("There is no {stat} information for {} in {}.", player.name, oxford(&missing_years));
    }
    let mut out = if stat_key == "cap_savings" {
        let team = team.map_or("the team".to_string(), |t| format!("the {t}"));
        let mut s = format!("If {} leaves, {team} would free up the following cap space:", player.name);
        for (y, v) in rows {
            s.push_str(&format!("\n{y}: {}", money(*v)));
        }
        if !missing.is_empty() {
            s.push_str(&format!(
                "\nThere is no information available for the amount of cap space {team} would free up in {}.",
                oxford(&missing_years)
            ));
        }
        return s;
    } else if let [(y, v)] = rows {
        format!("{} {stat} for {y} is {}.", possessive(&player.name), money(*v))
    } else {
        let mut s = format!("{} {stat} by year:", possessive(&player.name));
        for (y, v) in rows {
            s.push_str(&format!("\n{y}: {}", money(*v)));
        }
        s
    };
    if !missing.is_empty() {
        out.push_str(&format!("\nThere is no {stat} information for {}.", oxford(&missing_years)));
    }
    out
}
