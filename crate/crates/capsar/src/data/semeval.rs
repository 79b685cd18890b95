//! SemEval-2014 Task-4 XML ingestion.
//!
//! Expected structure:
//!
//! ```xml
//! <sentences>
//!   <sentence id="2339">
//!     <text>I charge it at night and skip taking the cord with me...</text>
//!     <aspectTerms>
//!       <aspectTerm term="cord" polarity="neutral" from="41" to="45"/>
//!     </aspectTerms>
//!   </sentence>
//! </sentences>
//! ```
//!
//! Elements other than the ones above (e.g. `aspectCategories`) are
//! ignored. Offsets are character positions into the text, end-exclusive.

use crate::data::{validate_aspect, AspectAnnotation, Polarity, RawSentence};
use crate::error::{Error, Result};

/// Parses a full SemEval XML document into [`RawSentence`] records in
/// document order. Malformed XML fails with the offending line; a bad
/// annotation (offsets outside the text, term/span mismatch, unknown
/// polarity) fails naming the sentence id.
pub fn parse_semeval_xml(xml: &str) -> Result<Vec<RawSentence>> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| Error::Parse {
        line: e.pos().row as usize,
        msg: e.to_string(),
    })?;

    let line_of = |node: roxmltree::Node| -> usize {
        doc.text_pos_at(node.range().start).row as usize
    };

    let root = doc.root_element();
    if root.tag_name().name() != "sentences" {
        return Err(Error::Parse {
            line: line_of(root),
            msg: format!(
                "expected <sentences> root element, found <{}>",
                root.tag_name().name()
            ),
        });
    }

    let mut sentences = Vec::new();
    for node in root.children().filter(|n| n.has_tag_name("sentence")) {
        let id = node
            .attribute("id")
            .map(str::to_string)
            .unwrap_or_else(|| format!("sentence-{}", sentences.len() + 1));

        let text = node
            .children()
            .find(|n| n.has_tag_name("text"))
            .and_then(|n| n.text())
            .ok_or_else(|| Error::Parse {
                line: line_of(node),
                msg: format!("sentence {id} has no <text> element"),
            })?
            .to_string();

        let mut aspects = Vec::new();
        if let Some(terms) = node.children().find(|n| n.has_tag_name("aspectTerms")) {
            for term_node in terms.children().filter(|n| n.has_tag_name("aspectTerm")) {
                let attr = |name: &str| -> Result<&str> {
                    term_node.attribute(name).ok_or_else(|| Error::Parse {
                        line: line_of(term_node),
                        msg: format!("aspectTerm in sentence {id} is missing \"{name}\""),
                    })
                };
                let term = attr("term")?.to_string();
                let polarity_str = attr("polarity")?;
                let polarity = Polarity::parse(polarity_str).ok_or_else(|| Error::Record {
                    id: id.clone(),
                    msg: format!("unknown polarity \"{polarity_str}\" on aspect \"{term}\""),
                })?;
                let offset = |name: &str| -> Result<usize> {
                    attr(name)?.parse().map_err(|_| Error::Record {
                        id: id.clone(),
                        msg: format!("aspect \"{term}\" has non-numeric {name} offset"),
                    })
                };
                let from = offset("from")?;
                let to = offset("to")?;
                let aspect = AspectAnnotation {
                    term,
                    polarity,
                    from,
                    to,
                };
                validate_aspect(&id, &text, &aspect)?;
                aspects.push(aspect);
            }
        }

        sentences.push(RawSentence { id, text, aspects });
    }

    Ok(sentences)
}
