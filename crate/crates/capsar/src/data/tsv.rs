//! Tab-separated line format — the hand-editable alternative to the XML.
//!
//! One record per line, UTF-8, LF endings:
//!
//! ```text
//! text<TAB>aspect term<TAB>from<TAB>to<TAB>polarity
//! ```
//!
//! Consecutive lines with identical text merge into one sentence carrying
//! several aspects; a line containing only text (no tabs) is an aspect-free
//! sentence. Offsets are character positions, end-exclusive, same as XML.

use crate::data::{validate_aspect, AspectAnnotation, Polarity, RawSentence};
use crate::error::{Error, Result};

/// Parses the TSV format. Sentence ids are synthesized from the first line
/// number of each sentence (`line-N`) so record errors stay locatable.
pub fn parse_tsv(input: &str) -> Result<Vec<RawSentence>> {
    let mut sentences: Vec<RawSentence> = Vec::new();

    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();

        let (text, aspect) = match fields.len() {
            1 => (fields[0], None),
            5 => {
                let term = fields[1].to_string();
                let from: usize = fields[2].parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("\"from\" is not a number: {:?}", fields[2]),
                })?;
                let to: usize = fields[3].parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("\"to\" is not a number: {:?}", fields[3]),
                })?;
                let polarity = Polarity::parse(fields[4]).ok_or_else(|| Error::Parse {
                    line: line_no,
                    msg: format!("unknown polarity {:?}", fields[4]),
                })?;
                (
                    fields[0],
                    Some(AspectAnnotation {
                        term,
                        polarity,
                        from,
                        to,
                    }),
                )
            }
            n => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 1 or 5 tab-separated fields, found {n}"),
                })
            }
        };

        // Same text as the previous record → same sentence, another aspect.
        let grow_last = sentences.last().is_some_and(|s| s.text == text);
        if !grow_last {
            sentences.push(RawSentence {
                id: format!("line-{line_no}"),
                text: text.to_string(),
                aspects: Vec::new(),
            });
        }
        if let Some(aspect) = aspect {
            let sentence = sentences.last_mut().expect("just pushed or matched");
            validate_aspect(&sentence.id, &sentence.text, &aspect)?;
            sentence.aspects.push(aspect);
        }
    }

    Ok(sentences)
}

/// Inverse of [`parse_tsv`]: one line per aspect, or a bare text line for
/// aspect-free sentences.
pub fn write_tsv(sentences: &[RawSentence]) -> String {
    let mut out = String::new();
    for sentence in sentences {
        if sentence.aspects.is_empty() {
            out.push_str(&sentence.text);
            out.push('\n');
            continue;
        }
        for aspect in &sentence.aspects {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                sentence.text,
                aspect.term,
                aspect.from,
                aspect.to,
                aspect.polarity.as_str()
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{to_examples, Vocabulary};

    const SAMPLE: &str = "the battery is great\tbattery\t4\t11\tpositive\n\
the battery is great\tgreat\t15\t20\tpositive\n\
no aspects in this one\n\
service was slow\tservice\t0\t7\tnegative\n";

    #[test]
    fn consecutive_identical_texts_merge_into_one_sentence() {
        let sentences = parse_tsv(SAMPLE).unwrap();
        assert_eq!(sentences.len(), 3);
        assert_eq!(sentences[0].aspects.len(), 2);
        assert!(sentences[1].aspects.is_empty());
        assert_eq!(sentences[2].aspects[0].polarity, Polarity::Negative);
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let input = "# a comment\n\nfood was good\tfood\t0\t4\tpositive\n";
        let sentences = parse_tsv(input).unwrap();
        assert_eq!(sentences.len(), 1);
    }

    #[test]
    fn wrong_field_count_names_the_line() {
        let input = "good\tfood\t0\n";
        match parse_tsv(input) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_offsets_name_the_record() {
        let input = "short text\tmissing\t0\t7\tneutral\n";
        assert!(matches!(parse_tsv(input), Err(Error::Record { .. })));
    }

    #[test]
    fn roundtrip_preserves_examples() {
        let sentences = parse_tsv(SAMPLE).unwrap();
        let reparsed = parse_tsv(&write_tsv(&sentences)).unwrap();
        let vocab = Vocabulary::build(&sentences);
        let a = to_examples(&sentences, &vocab, 75).unwrap();
        let b = to_examples(&reparsed, &vocab, 75).unwrap();
        assert_eq!(a.examples, b.examples);
        assert_eq!(a.skipped_truncated, b.skipped_truncated);
    }
}
