//! Rule-file parser.
//!
//! ```text
//! # comment
//! class LONG = "long" @mesh | "long haul" @mesh @wikidata
//!     | "long hauler"
//! class CAUSE = COVID | VIRUS        # bare names include other classes
//! rule long_covid = LONG CAUSE SUFFIX?
//! ```
//!
//! A line starting with `|` continues the previous class declaration.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::{tokenize, Alternative, GrammarRuleSet, Rule, Slot, TokenClass};
use crate::error::{Error, Result};

pub fn compile_grammar(path: impl AsRef<Path>) -> Result<GrammarRuleSet> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_grammar(&src)
}

#[derive(Debug)]
enum RawAlt {
    Literal { tokens: Vec<String>, tags: Vec<String> },
    Include(String),
}

#[derive(Debug)]
struct RawClass {
    name: String,
    line: usize,
    alts: Vec<RawAlt>,
}

#[derive(Debug)]
struct RawRule {
    name: String,
    line: usize,
    slots: Vec<(String, bool)>,
}

fn grammar_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Grammar(format!("line {line}: {msg}"))
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quote = !in_quote,
            '#' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Splits an alternatives list on `|` outside quotes.
fn split_alternatives(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut in_quote = false;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '"' => in_quote = !in_quote,
            '|' if !in_quote => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

fn parse_alternative(src: &str, line: usize) -> Result<RawAlt> {
    let src = src.trim();
    if let Some(rest) = src.strip_prefix('"') {
        let close = rest
            .find('"')
            .ok_or_else(|| grammar_err(line, "unterminated string"))?;
        let literal = &rest[..close];
        let tokens: Vec<String> = tokenize(literal).into_iter().map(|t| t.text).collect();
        if tokens.is_empty() {
            return Err(grammar_err(line, format!("empty alternative {literal:?}")));
        }
        let mut tags = Vec::new();
        for tag in rest[close + 1..].split_whitespace() {
            let tag = tag
                .strip_prefix('@')
                .filter(|t| is_ident(t))
                .ok_or_else(|| grammar_err(line, format!("expected @tag, found {tag:?}")))?;
            tags.push(tag.to_string());
        }
        Ok(RawAlt::Literal { tokens, tags })
    } else if is_ident(src) {
        Ok(RawAlt::Include(src.to_string()))
    } else if src.is_empty() {
        Err(grammar_err(line, "empty alternative"))
    } else {
        Err(grammar_err(line, format!("invalid alternative {src:?}")))
    }
}

fn parse_declaration<'a>(body: &'a str, keyword: &str, line: usize) -> Result<(String, &'a str)> {
    let (name, rhs) = body
        .split_once('=')
        .ok_or_else(|| grammar_err(line, format!("expected `{keyword} NAME = ...`")))?;
    let name = name.trim();
    if !is_ident(name) {
        return Err(grammar_err(line, format!("invalid {keyword} name {name:?}")));
    }
    Ok((name.to_string(), rhs))
}

pub fn parse_grammar(src: &str) -> Result<GrammarRuleSet> {
    let mut classes: Vec<RawClass> = Vec::new();
    let mut rules: Vec<RawRule> = Vec::new();
    let mut continuing = false;

    for (i, raw) in src.lines().enumerate() {
        let line = i + 1;
        let text = strip_comment(raw).trim();
        if text.is_empty() {
            continue;
        }
        if let Some(rest) = text.strip_prefix('|') {
            if !continuing {
                return Err(grammar_err(line, "continuation outside a class declaration"));
            }
            let class = classes.last_mut().expect("continuing implies a class");
            for alt in split_alternatives(rest) {
                class.alts.push(parse_alternative(alt, line)?);
            }
        } else if let Some(body) = text.strip_prefix("class ") {
            let (name, rhs) = parse_declaration(body, "class", line)?;
            let alts = split_alternatives(rhs)
                .into_iter()
                .map(|a| parse_alternative(a, line))
                .collect::<Result<Vec<_>>>()?;
            classes.push(RawClass { name, line, alts });
            continuing = true;
        } else if let Some(body) = text.strip_prefix("rule ") {
            let (name, rhs) = parse_declaration(body, "rule", line)?;
            let mut slots = Vec::new();
            for word in rhs.split_whitespace() {
                let (class, optional) = match word.strip_suffix('?') {
                    Some(c) => (c, true),
                    None => (word, false),
                };
                if !is_ident(class) {
                    return Err(grammar_err(line, format!("invalid slot {word:?}")));
                }
                slots.push((class.to_string(), optional));
            }
            if slots.is_empty() {
                return Err(grammar_err(line, format!("rule {name} is empty")));
            }
            rules.push(RawRule { name, line, slots });
            continuing = false;
        } else {
            return Err(grammar_err(line, format!("unrecognized declaration {text:?}")));
        }
    }

    let mut index = HashMap::new();
    for (i, c) in classes.iter().enumerate() {
        if index.insert(c.name.clone(), i).is_some() {
            return Err(grammar_err(c.line, format!("class {} declared twice", c.name)));
        }
    }
    let mut rule_names = HashSet::new();
    for r in &rules {
        if !rule_names.insert(r.name.as_str()) {
            return Err(grammar_err(r.line, format!("rule {} declared twice", r.name)));
        }
    }

    let mut expanded: Vec<Option<Vec<Alternative>>> = vec![None; classes.len()];
    for i in 0..classes.len() {
        expand_class(i, &classes, &index, &mut expanded, &mut Vec::new())?;
    }
    let compiled_classes = classes
        .iter()
        .zip(expanded)
        .map(|(c, alts)| TokenClass::new(c.name.clone(), alts.expect("expanded")))
        .collect();

    let mut compiled_rules = Vec::with_capacity(rules.len());
    for r in rules {
        let mut slots = Vec::with_capacity(r.slots.len());
        for (class, optional) in &r.slots {
            let idx = *index.get(class).ok_or_else(|| {
                grammar_err(
                    r.line,
                    format!("rule {} references undefined class {class}", r.name),
                )
            })?;
            slots.push(Slot {
                class: idx,
                optional: *optional,
            });
        }
        compiled_rules.push(Rule {
            name: r.name,
            slots,
        });
    }

    Ok(GrammarRuleSet {
        classes: compiled_classes,
        rules: compiled_rules,
    })
}

/// Flattens class includes depth first, rejecting cycles.
fn expand_class(
    i: usize,
    classes: &[RawClass],
    index: &HashMap<String, usize>,
    done: &mut Vec<Option<Vec<Alternative>>>,
    stack: &mut Vec<usize>,
) -> Result<()> {
    if done[i].is_some() {
        return Ok(());
    }
    if let Some(pos) = stack.iter().position(|&s| s == i) {
        let cycle: Vec<&str> = stack[pos..]
            .iter()
            .chain(std::iter::once(&i))
            .map(|&s| classes[s].name.as_str())
            .collect();
        return Err(grammar_err(
            classes[i].line,
            format!("cycle in class includes: {}", cycle.join(" -> ")),
        ));
    }
    stack.push(i);
    let mut alts: Vec<Alternative> = Vec::new();
    for alt in &classes[i].alts {
        match alt {
            RawAlt::Literal { tokens, tags } => alts.push(Alternative {
                tokens: tokens.clone(),
                tags: tags.clone(),
            }),
            RawAlt::Include(name) => {
                let j = *index.get(name).ok_or_else(|| {
                    grammar_err(
                        classes[i].line,
                        format!("class {} includes undefined class {name}", classes[i].name),
                    )
                })?;
                expand_class(j, classes, index, done, stack)?;
                alts.extend(done[j].as_ref().expect("expanded").iter().cloned());
            }
        }
    }
    stack.pop();
    let mut seen = HashSet::new();
    alts.retain(|a| seen.insert(a.tokens.clone()));
    if alts.is_empty() {
        return Err(grammar_err(
            classes[i].line,
            format!("class {} has no alternatives", classes[i].name),
        ));
    }
    done[i] = Some(alts);
    Ok(())
}
