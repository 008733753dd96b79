//! Minimal RFC 4180 reader/writer over in-memory text.
//!
//! Lives in the core crate because model replies are parsed as CSV inside
//! the generation loop; the std crate reuses it for files so the two paths
//! can never disagree on quoting. Reading is lenient where replies tend to
//! be sloppy: both LF and CRLF line endings are accepted, blank lines are
//! skipped, and a stray quote inside an unquoted field is taken literally.
//! An unterminated quoted field is still an error.

use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CsvError {
    #[error("unterminated quoted field starting on line {0}")]
    UnterminatedQuote(usize),
}

/// Parses CSV text into records of raw (unescaped) fields.
///
/// Records may span lines when a quoted field embeds a newline. Blank
/// lines between records are ignored; field content is preserved verbatim.
pub fn parse_records(text: &str) -> Result<Vec<Vec<String>>, CsvError> {
    let mut records = Vec::new();
    let mut record: Vec<String> = Vec::new();
    let mut field = String::new();
    // A record is "pending" once it has any separator or non-empty content,
    // so `a,,b\n` yields three fields while a blank line yields nothing.
    let mut pending = false;
    let mut line = 1usize;
    let mut quote_open_line = 1usize;

    let mut chars = text.chars().peekable();
    let mut in_quotes = false;
    while let Some(c) = chars.next() {
        if in_quotes {
            match c {
                '"' => {
                    if chars.peek() == Some(&'"') {
                        chars.next();
                        field.push('"');
                    } else {
                        in_quotes = false;
                    }
                }
                '\n' => {
                    line += 1;
                    field.push(c);
                }
                _ => field.push(c),
            }
            continue;
        }
        match c {
            '"' if field.is_empty() => {
                in_quotes = true;
                quote_open_line = line;
                pending = true;
            }
            '"' => field.push('"'),
            ',' => {
                record.push(core::mem::take(&mut field));
                pending = true;
            }
            '\r' if chars.peek() == Some(&'\n') => {}
            '\n' => {
                line += 1;
                if pending || !field.is_empty() {
                    record.push(core::mem::take(&mut field));
                    records.push(core::mem::take(&mut record));
                }
                pending = false;
            }
            _ => field.push(c),
        }
    }
    if in_quotes {
        return Err(CsvError::UnterminatedQuote(quote_open_line));
    }
    if pending || !field.is_empty() {
        record.push(field);
        records.push(record);
    }
    Ok(records)
}

/// Writes one record as a line, quoting fields that need it.
pub fn write_record(fields: &[String], out: &mut String) {
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        if f.contains([',', '"', '\n', '\r']) {
            out.push('"');
            for c in f.chars() {
                if c == '"' {
                    out.push('"');
                }
                out.push(c);
            }
            out.push('"');
        } else {
            out.push_str(f);
        }
    }
    out.push('\n');
}

/// Serializes records to CSV text with a trailing newline.
pub fn write_records<R: AsRef<[String]>>(records: &[R]) -> String {
    let mut out = String::new();
    for r in records {
        write_record(r.as_ref(), &mut out);
    }
    out
}
