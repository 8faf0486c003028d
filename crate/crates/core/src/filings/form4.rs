//! Reader and writer for the subset of the SEC ownership-document schema the
//! pipeline consumes.
//!
//! Recognised layout (unknown elements are ignored):
//!
//! ```text
//! ownershipDocument
//!   accessionNumber?            non-standard; falls back to the file stem
//!   acceptanceDate?             non-standard; falls back to ownerSignature/signatureDate
//!   issuer/issuerCik
//!   issuer/issuerTradingSymbol
//!   issuer/issuerCusip?         non-standard; empty when absent
//!   reportingOwner/reportingOwnerId/rptOwnerCik
//!   reportingOwner/reportingOwnerRelationship/{isDirector,isOfficer,officerTitle,isTenPercentOwner,isOther,otherText}
//!   nonDerivativeTable/nonDerivativeTransaction*
//!     transactionDate/value
//!     transactionCoding/transactionCode
//!     transactionAmounts/transactionShares/value
//!     transactionAmounts/transactionPricePerShare/value
//!     transactionAmounts/transactionValue/value?   non-standard cross-check
//!   ownerSignature/signatureDate?
//! ```

use std::path::Path;

use chrono::NaiveDate;
use quick_xml::escape::escape;
use quick_xml::events::Event;
use quick_xml::Reader;

use super::InsiderTransaction;
use crate::error::{Error, Result};

/// Reported and recomputed transaction values may differ by this much.
pub const VALUE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Default)]
struct Node {
    name: String,
    text: String,
    children: Vec<Node>,
}

impl Node {
    fn child(&self, name: &str) -> Option<&Node> {
        self.children.iter().find(|c| c.name == name)
    }

    fn children_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Node> + 'a {
        self.children.iter().filter(move |c| c.name == name)
    }

    fn path(&self, path: &[&str]) -> Option<&Node> {
        path.iter().try_fold(self, |node, name| node.child(name))
    }

    /// Trimmed text at `path`, or at `path/value` for the schema's boxed values.
    fn text_at(&self, path: &[&str]) -> Option<&str> {
        let node = self.path(path)?;
        let node = node.child("value").unwrap_or(node);
        let t = node.text.trim();
        (!t.is_empty()).then_some(t)
    }
}

fn build_tree(bytes: &[u8]) -> Result<Node> {
    let mut reader = Reader::from_reader(bytes);
    reader.config_mut().trim_text(true);
    let mut buf = Vec::new();
    let mut stack: Vec<Node> = vec![Node::default()];
    let xml_err = |reader: &Reader<&[u8]>, message: String| Error::Xml {
        offset: reader.error_position(),
        message,
    };
    loop {
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| xml_err(&reader, e.to_string()))?;
        match event {
            Event::Start(e) => stack.push(Node {
                name: String::from_utf8_lossy(e.local_name().as_ref()).into_owned(),
                ..Node::default()
            }),
            Event::Empty(e) => {
                let node = Node {
                    name: String::from_utf8_lossy(e.local_name().as_ref()).into_owned(),
                    ..Node::default()
                };
                stack.last_mut().expect("root").children.push(node);
            }
            Event::End(_) => {
                let node = stack.pop().expect("balanced");
                stack.last_mut().expect("root").children.push(node);
            }
            Event::Text(t) => {
                let text = t.unescape().map_err(|e| xml_err(&reader, e.to_string()))?;
                stack.last_mut().expect("root").text.push_str(&text);
            }
            Event::CData(t) => {
                stack
                    .last_mut()
                    .expect("root")
                    .text
                    .push_str(&String::from_utf8_lossy(&t));
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if stack.len() != 1 {
        return Err(Error::Xml {
            offset: bytes.len() as u64,
            message: format!("unexpected end of document inside <{}>", stack.last().unwrap().name),
        });
    }
    let mut root = stack.pop().unwrap();
    match root.children.len() {
        1 => Ok(root.children.pop().unwrap()),
        0 => Err(Error::Xml {
            offset: bytes.len() as u64,
            message: "document has no root element".into(),
        }),
        _ => Err(Error::Xml {
            offset: bytes.len() as u64,
            message: "document has more than one root element".into(),
        }),
    }
}

fn required<'a>(node: &'a Node, path: &[&str], element: &str) -> Result<&'a str> {
    node.text_at(path).ok_or_else(|| Error::Schema {
        element: element.to_string(),
    })
}

fn parse_date(raw: &str, element: &str) -> Result<NaiveDate> {
    // EDGAR dates sometimes carry a zone suffix, e.g. 2024-03-01-05:00
    raw.get(..10)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Validation(format!("`{element}` is not an ISO date: `{raw}`")))
}

fn parse_amount(raw: &str, element: &str) -> Result<f64> {
    let v: f64 = raw
        .replace(',', "")
        .parse()
        .map_err(|_| Error::Validation(format!("`{element}` is not a number: `{raw}`")))?;
    if !v.is_finite() {
        return Err(Error::Validation(format!("`{element}` is not finite")));
    }
    if v < 0.0 {
        return Err(Error::Validation(format!("`{element}` is negative: {v}")));
    }
    Ok(v)
}

fn flag(node: &Node, name: &str) -> bool {
    node.text_at(&[name])
        .is_some_and(|t| t == "1" || t.eq_ignore_ascii_case("true"))
}

fn owner_title(relationship: Option<&Node>) -> String {
    let Some(rel) = relationship else {
        return String::new();
    };
    let mut parts: Vec<String> = Vec::new();
    if let Some(t) = rel.text_at(&["officerTitle"]) {
        parts.push(t.to_string());
    } else if flag(rel, "isOfficer") {
        parts.push("Officer".into());
    }
    if flag(rel, "isDirector") {
        parts.push("Director".into());
    }
    if flag(rel, "isTenPercentOwner") {
        parts.push("10% Owner".into());
    }
    if flag(rel, "isOther") {
        parts.push(rel.text_at(&["otherText"]).unwrap_or("Other").to_string());
    }
    parts.join("; ")
}

/// Result of parsing one document, with non-fatal findings.
#[derive(Debug, Clone, Default)]
pub struct ParsedDocument {
    pub transactions: Vec<InsiderTransaction>,
    pub warnings: Vec<String>,
}

/// Parses one ownership document into one record per non-derivative row.
pub fn parse_form4(document: &[u8]) -> Result<Vec<InsiderTransaction>> {
    parse_form4_detailed(document, None).map(|p| p.transactions)
}

/// Parses a document file; the file stem stands in for a missing accession number.
pub fn parse_form4_file(path: &Path) -> Result<ParsedDocument> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    parse_form4_detailed(&bytes, stem.as_deref())
}

pub fn parse_form4_detailed(document: &[u8], fallback_accession: Option<&str>) -> Result<ParsedDocument> {
    let root = build_tree(document)?;
    if root.name != "ownershipDocument" {
        return Err(Error::Schema {
            element: "ownershipDocument".into(),
        });
    }
    let accession_id = match root.text_at(&["accessionNumber"]).or(fallback_accession) {
        Some(a) => a.to_string(),
        None => {
            return Err(Error::Schema {
                element: "accessionNumber".into(),
            })
        }
    };
    let disclosure_raw = root
        .text_at(&["acceptanceDate"])
        .or_else(|| root.text_at(&["ownerSignature", "signatureDate"]))
        .ok_or_else(|| Error::Schema {
            element: "acceptanceDate".into(),
        })?;
    let disclosure_date = parse_date(disclosure_raw, "acceptanceDate")?;

    let issuer_id = required(&root, &["issuer", "issuerCik"], "issuerCik")?.to_string();
    let ticker = required(&root, &["issuer", "issuerTradingSymbol"], "issuerTradingSymbol")?.to_string();
    let cusip = root.text_at(&["issuer", "issuerCusip"]).unwrap_or_default().to_string();

    let owner = root.child("reportingOwner").ok_or_else(|| Error::Schema {
        element: "reportingOwner".into(),
    })?;
    let insider_id = required(owner, &["reportingOwnerId", "rptOwnerCik"], "rptOwnerCik")?.to_string();
    let insider_title_raw = owner_title(owner.child("reportingOwnerRelationship"));

    let mut out = ParsedDocument::default();
    let rows = root
        .child("nonDerivativeTable")
        .into_iter()
        .flat_map(|t| t.children_named("nonDerivativeTransaction"));
    for row in rows {
        let transaction_date = parse_date(
            required(row, &["transactionDate"], "transactionDate")?,
            "transactionDate",
        )?;
        let code_raw = required(row, &["transactionCoding", "transactionCode"], "transactionCode")?;
        let mut chars = code_raw.chars();
        let transaction_code = match (chars.next(), chars.next()) {
            (Some(c), None) => c,
            _ => {
                return Err(Error::Validation(format!(
                    "transactionCode must be a single character, got `{code_raw}`"
                )))
            }
        };
        let shares = parse_amount(
            required(row, &["transactionAmounts", "transactionShares"], "transactionShares")?,
            "transactionShares",
        )?;
        let price_per_share = parse_amount(
            required(
                row,
                &["transactionAmounts", "transactionPricePerShare"],
                "transactionPricePerShare",
            )?,
            "transactionPricePerShare",
        )?;
        if disclosure_date < transaction_date {
            return Err(Error::Validation(format!(
                "disclosure date {disclosure_date} precedes transaction date {transaction_date}"
            )));
        }
        let transaction_value = shares * price_per_share;
        if let Some(reported) = row.text_at(&["transactionAmounts", "transactionValue"]) {
            let reported = parse_amount(reported, "transactionValue")?;
            if (reported - transaction_value).abs() > VALUE_TOLERANCE {
                let msg = format!(
                    "{accession_id}: reported value {reported} differs from shares x price {transaction_value}; using the recomputed value"
                );
                tracing::warn!("{msg}");
                out.warnings.push(msg);
            }
        }
        out.transactions.push(InsiderTransaction {
            accession_id: accession_id.clone(),
            issuer_id: issuer_id.clone(),
            cusip: cusip.clone(),
            ticker: ticker.clone(),
            insider_id: insider_id.clone(),
            insider_title_raw: insider_title_raw.clone(),
            transaction_date,
            disclosure_date,
            transaction_code,
            shares,
            price_per_share,
            transaction_value,
        });
    }
    Ok(out)
}

fn push_value(out: &mut String, indent: &str, name: &str, value: &str) {
    out.push_str(&format!("{indent}<{name}><value>{}</value></{name}>\n", escape(value)));
}

fn push_leaf(out: &mut String, indent: &str, name: &str, value: &str) {
    out.push_str(&format!("{indent}<{name}>{}</{name}>\n", escape(value)));
}

/// Renders records that share one filing (accession, issuer, insider and
/// disclosure date) as an ownership document.
pub fn write_form4(records: &[InsiderTransaction]) -> Result<String> {
    let first = records
        .first()
        .ok_or_else(|| Error::Validation("cannot write an empty ownership document".into()))?;
    let same_filing = |r: &InsiderTransaction| {
        r.accession_id == first.accession_id
            && r.issuer_id == first.issuer_id
            && r.insider_id == first.insider_id
            && r.ticker == first.ticker
            && r.cusip == first.cusip
            && r.disclosure_date == first.disclosure_date
            && r.insider_title_raw == first.insider_title_raw
    };
    if !records.iter().all(same_filing) {
        return Err(Error::Validation(
            "records in one ownership document must share filing-level fields".into(),
        ));
    }
    let mut x = String::with_capacity(1024 + 512 * records.len());
    x.push_str("<?xml version=\"1.0\"?>\n<ownershipDocument>\n");
    push_leaf(&mut x, "  ", "schemaVersion", "X0508");
    push_leaf(&mut x, "  ", "documentType", "4");
    push_leaf(&mut x, "  ", "accessionNumber", &first.accession_id);
    push_leaf(&mut x, "  ", "acceptanceDate", &first.disclosure_date.to_string());
    let period = records.iter().map(|r| r.transaction_date).min().unwrap();
    push_leaf(&mut x, "  ", "periodOfReport", &period.to_string());
    x.push_str("  <issuer>\n");
    push_leaf(&mut x, "    ", "issuerCik", &first.issuer_id);
    push_leaf(&mut x, "    ", "issuerTradingSymbol", &first.ticker);
    if !first.cusip.is_empty() {
        push_leaf(&mut x, "    ", "issuerCusip", &first.cusip);
    }
    x.push_str("  </issuer>\n  <reportingOwner>\n    <reportingOwnerId>\n");
    push_leaf(&mut x, "      ", "rptOwnerCik", &first.insider_id);
    x.push_str("    </reportingOwnerId>\n    <reportingOwnerRelationship>\n");
    if !first.insider_title_raw.is_empty() {
        push_leaf(&mut x, "      ", "isOfficer", "1");
        push_leaf(&mut x, "      ", "officerTitle", &first.insider_title_raw);
    }
    x.push_str("    </reportingOwnerRelationship>\n  </reportingOwner>\n  <nonDerivativeTable>\n");
    for r in records {
        x.push_str("    <nonDerivativeTransaction>\n");
        push_value(&mut x, "      ", "securityTitle", "Common Stock");
        push_value(&mut x, "      ", "transactionDate", &r.transaction_date.to_string());
        x.push_str("      <transactionCoding>\n");
        push_leaf(&mut x, "        ", "transactionFormType", "4");
        push_leaf(&mut x, "        ", "transactionCode", &r.transaction_code.to_string());
        x.push_str("      </transactionCoding>\n      <transactionAmounts>\n");
        push_value(&mut x, "        ", "transactionShares", &r.shares.to_string());
        push_value(
            &mut x,
            "        ",
            "transactionPricePerShare",
            &r.price_per_share.to_string(),
        );
        let acquired = if r.transaction_code == 'S' { "D" } else { "A" };
        push_value(&mut x, "        ", "transactionAcquiredDisposedCode", acquired);
        x.push_str("      </transactionAmounts>\n    </nonDerivativeTransaction>\n");
    }
    x.push_str("  </nonDerivativeTable>\n  <ownerSignature>\n");
    push_leaf(&mut x, "    ", "signatureName", &first.insider_id);
    push_leaf(&mut x, "    ", "signatureDate", &first.disclosure_date.to_string());
    x.push_str("  </ownerSignature>\n</ownershipDocument>\n");
    Ok(x)
}
