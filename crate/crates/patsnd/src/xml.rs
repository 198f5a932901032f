//! Importer for hand-annotated instances in XML.
//!
//! ```xml
//! <instance>
//! <instance_id>1</instance_id>
//! <text> ... <e1>Elon Musk</e1> ... <e2>The Big Bang Theory</e2> ... </text>
//! <e1>
//! <id>Q8539</id>
//! <label>The Big Bang Theory</label>
//! <description>American television sitcom 2007-2019</description>
//! <property_value>
//! P31 || instance of || television series
//! P58 || screenwriter || ["Chuck Lorre", "Bill Prady"]
//! </property_value>
//! </e1>
//! <e2> ... </e2>
//! </instance>
//! ```
//!
//! The `<e1>`/`<e2>` entity blocks fix the triple direction. Inline tags in
//! `<text>` supply the spans and are matched to entity blocks by label, so
//! a text whose inline tags are numbered the other way round still imports
//! correctly. Instances may carry optional `<relation>` and `<label>`
//! (NORMAL or NOVEL) children; otherwise caller defaults apply.

use std::collections::BTreeMap;
use std::path::Path;

use roxmltree::{Document, Node};

use patsnd_core::kb::SourceProperty;
use patsnd_core::{EntityRecord, FactInstance, InstanceLabel, Mention, Span};

use crate::error::{IoError, IoResult};

/// Result of an import: instances in file order and one record per entity.
#[derive(Debug, Clone, PartialEq)]
pub struct XmlImport {
    pub instances: Vec<FactInstance>,
    pub entities: Vec<EntityRecord>,
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn child_text(node: Node, name: &str) -> Option<String> {
    child(node, name).map(|c| c.text().unwrap_or("").trim().to_string())
}

fn parse_values(raw: &str) -> Result<Vec<String>, String> {
    let raw = raw.trim();
    if raw.starts_with('[') {
        let values: Vec<String> =
            serde_json::from_str(raw).map_err(|e| format!("bad value list: {e}"))?;
        Ok(values.into_iter().map(|v| v.trim().to_string()).collect())
    } else {
        Ok(vec![raw.to_string()])
    }
}

fn parse_properties(text: &str) -> Result<Vec<SourceProperty>, String> {
    let mut props = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let mut parts = line.splitn(3, "||");
        let (Some(pid), Some(plabel), Some(values)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(format!("expected `pid || label || value`, got `{line}`"));
        };
        props.push(SourceProperty {
            pid: pid.trim().to_string(),
            plabel: plabel.trim().to_string(),
            values: parse_values(values)?,
        });
    }
    Ok(props)
}

fn parse_entity(node: Node) -> Result<EntityRecord, String> {
    let id = child_text(node, "id").ok_or("entity without <id>")?;
    let label = child_text(node, "label").ok_or("entity without <label>")?;
    let description = child_text(node, "description").unwrap_or_default();
    let props = match child(node, "property_value") {
        Some(pv) => parse_properties(pv.text().unwrap_or(""))?,
        None => Vec::new(),
    };
    EntityRecord::from_source(id, label, description, &props).map_err(|e| e.to_string())
}

/// Inline tag name to its char span and trimmed content.
type TagSpans = BTreeMap<String, (Span, String)>;

/// Flattens `<text>` and returns it with the char spans of its inline
/// `<e1>`/`<e2>` tags, keyed by tag name.
fn parse_text(node: Node) -> Result<(String, TagSpans), String> {
    let mut text = String::new();
    let mut tags = BTreeMap::new();
    for c in node.children() {
        if c.is_text() {
            text.push_str(c.text().unwrap_or(""));
        } else if c.is_element() {
            let name = c.tag_name().name().to_string();
            let inner: String = c.descendants().filter(|d| d.is_text()).filter_map(|d| d.text()).collect();
            let start = text.chars().count();
            text.push_str(&inner);
            let end = text.chars().count();
            if tags.insert(name.clone(), (Span::new(start, end), inner.trim().to_string())).is_some() {
                return Err(format!("<{name}> tagged twice in <text>"));
            }
        }
    }
    // Trim the outer whitespace and shift spans to match.
    let lead = text.chars().take_while(|c| c.is_whitespace()).count();
    let trimmed: String = text.trim().to_string();
    let len = trimmed.chars().count();
    for (span, _) in tags.values_mut() {
        span.start = span.start.saturating_sub(lead).min(len);
        span.end = span.end.saturating_sub(lead).min(len);
    }
    Ok((trimmed, tags))
}

fn parse_label(raw: &str) -> Result<InstanceLabel, String> {
    match raw.trim().to_ascii_uppercase().as_str() {
        "NORMAL" => Ok(InstanceLabel::Normal),
        "NOVEL" => Ok(InstanceLabel::Novel),
        other => Err(format!("unknown instance label `{other}`")),
    }
}

fn parse_instance(
    node: Node,
    default_relation: Option<&str>,
    default_label: InstanceLabel,
) -> Result<(FactInstance, [EntityRecord; 2]), String> {
    let id = child_text(node, "instance_id");
    let text_node = child(node, "text").ok_or("instance without <text>")?;
    let (text, tags) = parse_text(text_node)?;
    let e1 = parse_entity(child(node, "e1").ok_or("instance without <e1> block")?)?;
    let e2 = parse_entity(child(node, "e2").ok_or("instance without <e2> block")?)?;

    let span_for = |record: &EntityRecord, own_tag: &str| -> Result<Span, String> {
        let by_label: Vec<&(Span, String)> =
            tags.values().filter(|(_, inner)| *inner == record.label).collect();
        match by_label.as_slice() {
            [(span, _)] => Ok(*span),
            _ => tags
                .get(own_tag)
                .map(|(span, _)| *span)
                .ok_or_else(|| format!("no <{own_tag}> tag in <text>")),
        }
    };
    let s1 = span_for(&e1, "e1")?;
    let s2 = span_for(&e2, "e2")?;

    let relation = match child_text(node, "relation") {
        Some(r) => r,
        None => default_relation
            .ok_or("instance without <relation> and no default relation given")?
            .to_string(),
    };
    let label = match child_text(node, "label") {
        Some(l) => parse_label(&l)?,
        None => default_label,
    };
    let instance = FactInstance {
        id,
        text,
        e1: Mention::new(e1.entity_id.as_str(), s1),
        e2: Mention::new(e2.entity_id.as_str(), s2),
        relation_id: relation,
        label,
    };
    instance.validate().map_err(|e| e.to_string())?;
    Ok((instance, [e1, e2]))
}

/// Parses every `<instance>` element of `source`. The file may hold one
/// or many instances with or without an enclosing root element.
pub fn import_str(
    path: &Path,
    source: &str,
    default_relation: Option<&str>,
    default_label: InstanceLabel,
) -> IoResult<XmlImport> {
    let body = match source.trim_start().strip_prefix("<?xml") {
        Some(rest) => rest.split_once("?>").map_or("", |(_, b)| b),
        None => source,
    };
    // The wrapper sits on the first line so reported rows stay correct.
    let wrapped = format!("<patsnd-import>{body}</patsnd-import>");
    let doc = Document::parse(&wrapped).map_err(|e| IoError::parse(path, e.pos().row as usize, e))?;

    let mut out = XmlImport {
        instances: Vec::new(),
        entities: Vec::new(),
    };
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for node in doc.descendants().filter(|n| n.has_tag_name("instance")) {
        let row = doc.text_pos_at(node.range().start).row as usize;
        let (instance, records) = parse_instance(node, default_relation, default_label)
            .map_err(|e| IoError::parse(path, row, e))?;
        for record in records {
            match seen.get(&record.entity_id) {
                Some(&k) if out.entities[k] != record => {
                    return Err(IoError::parse(
                        path,
                        row,
                        format!("entity {} described differently in two places", record.entity_id),
                    ));
                }
                Some(_) => {}
                None => {
                    seen.insert(record.entity_id.clone(), out.entities.len());
                    out.entities.push(record);
                }
            }
        }
        out.instances.push(instance);
    }
    Ok(out)
}

pub fn import_file(
    path: &Path,
    default_relation: Option<&str>,
    default_label: InstanceLabel,
) -> IoResult<XmlImport> {
    let source = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    import_str(path, &source, default_relation, default_label)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"<instance>
<instance_id>1</instance_id>
<text> Despite his status and very busy schedule, <e1>Elon Musk</e1> still performs as an guest actor in <e2>The Big Bang Theory</e2> as himself. </text>
<e1>
<id>Q8539</id>
<label>The Big Bang Theory</label>
<description>American television sitcom 2007-2019</description>
<property_value>
P31 || instance of || television series, connected set of television program episodes under the same title
P58 || screenwriter || ["Chuck Lorre, American televison director", "Bill Prady, American television writer and producer"]
</property_value>
</e1>
<e2>
<id>Q317521</id>
<label>Elon Musk</label>
<description>business magnate (born 1971)</description>
<property_value>
P31 || instance of || human, common name of Homo sapiens
P106 || occupation || ["inventor", "programmer", "engineer", "entrepreneur"]
</property_value>
</e2>
</instance>
"#;

    #[test]
    fn reference_example() {
        let out = import_str(Path::new("a.xml"), SAMPLE, Some("P161"), InstanceLabel::Novel).unwrap();
        let inst = &out.instances[0];
        assert_eq!(inst.id.as_deref(), Some("1"));
        assert!(inst.text.starts_with("Despite"));
        assert_eq!(inst.e1.entity_id, "Q8539");
        assert_eq!(inst.e1.span.slice(&inst.text).unwrap(), "The Big Bang Theory");
        assert_eq!(inst.e2.span.slice(&inst.text).unwrap(), "Elon Musk");
        assert_eq!(inst.relation_id, "P161");
        assert_eq!(inst.label, InstanceLabel::Novel);

        let musk = out.entities.iter().find(|e| e.entity_id == "Q317521").unwrap();
        // label + description + 1 + 4 occupations
        assert_eq!(musk.pairs.len(), 7);
        assert_eq!(musk.pairs[6].value_text, "entrepreneur");
        let tbbt = &out.entities[0];
        assert_eq!(tbbt.pairs[3].value_text, "Chuck Lorre, American televison director");
    }

    #[test]
    fn explicit_relation_and_label_and_many_instances() {
        let second = SAMPLE
            .replace("<instance_id>1</instance_id>", "<instance_id>2</instance_id>\n<relation>P1000</relation>\n<label>normal</label>");
        let doc = format!("<?xml version=\"1.0\"?>\n<instances>\n{SAMPLE}{second}</instances>");
        let out = import_str(Path::new("a.xml"), &doc, None, InstanceLabel::Novel);
        // The first instance has no relation and there is no default.
        assert!(out.unwrap_err().to_string().contains("a.xml:3"));
        let out = import_str(Path::new("a.xml"), &doc, Some("P161"), InstanceLabel::Novel).unwrap();
        assert_eq!(out.instances.len(), 2);
        assert_eq!(out.entities.len(), 2);
        assert_eq!(out.instances[1].relation_id, "P1000");
        assert_eq!(out.instances[1].label, InstanceLabel::Normal);
    }

    #[test]
    fn malformed_input() {
        let p = Path::new("bad.xml");
        assert!(import_str(p, "<instance><text>x", Some("r"), InstanceLabel::Novel).is_err());
        let broken = SAMPLE.replace("P31 || instance of || human", "P31 | instance of");
        let err = import_str(p, &broken, Some("r"), InstanceLabel::Novel).unwrap_err();
        assert!(err.to_string().contains("pid || label || value"), "{err}");
        let conflicting = format!("{SAMPLE}{}", SAMPLE.replace("born 1971", "born 1972"));
        assert!(import_str(p, &conflicting, Some("r"), InstanceLabel::Novel).is_err());
    }
}
