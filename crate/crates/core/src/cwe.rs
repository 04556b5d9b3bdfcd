//! CWE identifiers and a small catalog of names for the weaknesses the
//! shipped guideline database covers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A Common Weakness Enumeration id. Always rendered as `CWE-<number>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CweId(u32);

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CweParseError {
    #[error("CWE number must be positive")]
    Zero,
    #[error("not a CWE identifier: {0:?}")]
    Malformed(String),
}

impl CweId {
    pub fn new(number: u32) -> Result<Self, CweParseError> {
        if number == 0 {
            return Err(CweParseError::Zero);
        }
        Ok(Self(number))
    }

    pub fn number(self) -> u32 {
        self.0
    }

    /// Catalog name, or `None` for weaknesses outside the built-in table.
    pub fn name(self) -> Option<&'static str> {
        CATALOG
            .binary_search_by_key(&self.0, |(n, _)| *n)
            .ok()
            .map(|i| CATALOG[i].1)
    }

    /// `CWE-78: Improper Neutralization ...`, the form bound into the
    /// CWE-description prompts.
    pub fn with_description(self) -> String {
        match self.name() {
            Some(name) => format!("{self}: {name}"),
            None => self.to_string(),
        }
    }
}

impl fmt::Display for CweId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CWE-{}", self.0)
    }
}

impl FromStr for CweId {
    type Err = CweParseError;

    /// Accepts `CWE-78`, `cwe-078` or a bare `78`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let digits = if t.len() > 4 && t[..4].eq_ignore_ascii_case("cwe-") {
            &t[4..]
        } else {
            t
        };
        let n: u32 = digits
            .parse()
            .map_err(|_| CweParseError::Malformed(s.to_string()))?;
        CweId::new(n)
    }
}

impl Serialize for CweId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u32(self.0)
    }
}

impl<'de> Deserialize<'de> for CweId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let n = u32::deserialize(d)?;
        CweId::new(n).map_err(serde::de::Error::custom)
    }
}

// Sorted by number.
const CATALOG: &[(u32, &str)] = &[
    (20, "Improper Input Validation"),
    (22, "Improper Limitation of a Pathname to a Restricted Directory ('Path Traversal')"),
    (78, "Improper Neutralization of Special Elements used in an OS Command ('OS Command Injection')"),
    (79, "Improper Neutralization of Input During Web Page Generation ('Cross-site Scripting')"),
    (89, "Improper Neutralization of Special Elements used in an SQL Command ('SQL Injection')"),
    (113, "Improper Neutralization of CRLF Sequences in HTTP Headers ('HTTP Request/Response Splitting')"),
    (117, "Improper Output Neutralization for Logs"),
    (119, "Improper Restriction of Operations within the Bounds of a Memory Buffer"),
    (120, "Buffer Copy without Checking Size of Input ('Classic Buffer Overflow')"),
    (125, "Out-of-bounds Read"),
    (131, "Incorrect Calculation of Buffer Size"),
    (134, "Use of Externally-Controlled Format String"),
    (170, "Improper Null Termination"),
    (190, "Integer Overflow or Wraparound"),
    (200, "Exposure of Sensitive Information to an Unauthorized Actor"),
    (252, "Unchecked Return Value"),
    (295, "Improper Certificate Validation"),
    (326, "Inadequate Encryption Strength"),
    (327, "Use of a Broken or Risky Cryptographic Algorithm"),
    (329, "Generation of Predictable IV with CBC Mode"),
    (338, "Use of Cryptographically Weak Pseudo-Random Number Generator (PRNG)"),
    (347, "Improper Verification of Cryptographic Signature"),
    (377, "Insecure Temporary File"),
    (400, "Uncontrolled Resource Consumption"),
    (401, "Missing Release of Memory after Effective Lifetime"),
    (415, "Double Free"),
    (416, "Use After Free"),
    (476, "NULL Pointer Dereference"),
    (502, "Deserialization of Untrusted Data"),
    (611, "Improper Restriction of XML External Entity Reference"),
    (643, "Improper Neutralization of Data within XPath Expressions ('XPath Injection')"),
    (676, "Use of Potentially Dangerous Function"),
    (732, "Incorrect Permission Assignment for Critical Resource"),
    (759, "Use of a One-Way Hash without a Salt"),
    (760, "Use of a One-Way Hash with a Predictable Salt"),
    (787, "Out-of-bounds Write"),
    (798, "Use of Hard-coded Credentials"),
    (918, "Server-Side Request Forgery (SSRF)"),
    (943, "Improper Neutralization of Special Elements in Data Query Logic"),
    (1333, "Inefficient Regular Expression Complexity"),
];
