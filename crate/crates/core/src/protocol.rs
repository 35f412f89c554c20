//! Machine-readable trial protocol: eligibility criteria, schedule of
//! activities, consent scopes, and data-format rules.
//!
//! The protocol is plain configuration. Contracts interpret it; nothing
//! here touches ledgers or channels. All times are logical days so that
//! replays are deterministic.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("schedule visits must be strictly ordered by nominal day (at '{0}')")]
    UnorderedVisits(String),
    #[error("duplicate attribute '{0}' in {1} predicates")]
    DuplicateAttribute(String, &'static str),
    #[error("prerequisite cycle involving activity '{0}'")]
    PrerequisiteCycle(String),
    #[error("invalid code pattern: {0}")]
    BadCodePattern(String),
    #[error("duplicate visit id '{0}'")]
    DuplicateVisit(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed protocol file: {0}")]
    Malformed(#[from] serde_json::Error),
}

/// Candidate attribute value. JSON maps onto the variants directly:
/// booleans, numbers, strings, and arrays of strings (treated as sets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Bool(bool),
    Num(f64),
    Str(String),
    Set(BTreeSet<String>),
}

impl AttrValue {
    pub fn set(codes: &[&str]) -> AttrValue {
        AttrValue::Set(codes.iter().map(|s| s.to_string()).collect())
    }
}

/// Flat attribute map describing a screening candidate. The map is the
/// only input eligibility ever sees.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Candidate(pub BTreeMap<String, AttrValue>);

impl Candidate {
    pub fn new(attrs: Vec<(&str, AttrValue)>) -> Self {
        Candidate(attrs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
    }

    pub fn get(&self, attr: &str) -> Option<&AttrValue> {
        self.0.get(attr)
    }
}

/// Decidable predicate over one candidate attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    /// Numeric attribute within [min, max], both ends inclusive.
    Range { attr: String, min: f64, max: f64 },
    /// String attribute equal to one of the listed values.
    OneOf { attr: String, values: BTreeSet<String> },
    /// Set attribute sharing at least one code with the listed values.
    ContainsAny { attr: String, values: BTreeSet<String> },
    /// Boolean attribute with the expected value.
    Flag { attr: String, expected: bool },
}

impl Predicate {
    pub fn attr(&self) -> &str {
        match self {
            Predicate::Range { attr, .. }
            | Predicate::OneOf { attr, .. }
            | Predicate::ContainsAny { attr, .. }
            | Predicate::Flag { attr, .. } => attr,
        }
    }

    /// Evaluate against the candidate. A missing or wrongly-typed
    /// attribute makes the predicate false.
    pub fn eval(&self, candidate: &Candidate) -> bool {
        match self {
            Predicate::Range { attr, min, max } => match candidate.get(attr) {
                Some(AttrValue::Num(v)) => *min <= *v && *v <= *max,
                _ => false,
            },
            Predicate::OneOf { attr, values } => match candidate.get(attr) {
                Some(AttrValue::Str(s)) => values.contains(s),
                _ => false,
            },
            Predicate::ContainsAny { attr, values } => match candidate.get(attr) {
                Some(AttrValue::Set(s)) => s.intersection(values).next().is_some(),
                _ => false,
            },
            Predicate::Flag { attr, expected } => match candidate.get(attr) {
                Some(AttrValue::Bool(b)) => b == expected,
                _ => false,
            },
        }
    }

    /// Sorted codes shared between a set attribute and this predicate's
    /// values; used to name the offending code in exclusion details.
    fn matching_codes(&self, candidate: &Candidate) -> Vec<String> {
        match self {
            Predicate::ContainsAny { attr, values } => match candidate.get(attr) {
                Some(AttrValue::Set(s)) => s.intersection(values).cloned().collect(),
                _ => Vec::new(),
            },
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EligibilityCriteria {
    pub inclusion: Vec<Predicate>,
    pub exclusion: Vec<Predicate>,
}

impl EligibilityCriteria {
    /// All inclusion predicates must hold and no exclusion predicate may.
    /// On failure, names the first failing inclusion attribute, or
    /// `exclusion:<code>` / `exclusion:<attr>` for a matched exclusion.
    pub fn check(&self, candidate: &Candidate) -> Result<(), String> {
        for p in &self.inclusion {
            if !p.eval(candidate) {
                return Err(p.attr().to_string());
            }
        }
        for p in &self.exclusion {
            if p.eval(candidate) {
                let detail = match p.matching_codes(candidate).first() {
                    Some(code) => format!("exclusion:{code}"),
                    None => format!("exclusion:{}", p.attr()),
                };
                return Err(detail);
            }
        }
        Ok(())
    }
}

/// One scheduled visit. Windows are symmetric-capable offsets in logical
/// days around `nominal_day` counted from the subject's enrollment day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitDef {
    pub visit_id: String,
    pub nominal_day: u64,
    pub window_minus: u64,
    pub window_plus: u64,
    #[serde(default)]
    pub required_activities: Vec<String>,
    /// activity → activities that must already be recorded
    #[serde(default)]
    pub prerequisites: BTreeMap<String, Vec<String>>,
}

impl VisitDef {
    /// Closed acceptance interval for a subject enrolled on `enrolled_at`.
    /// Signed because the window may extend below day zero.
    pub fn window(&self, enrolled_at: u64) -> (i64, i64) {
        let nominal = enrolled_at as i64 + self.nominal_day as i64;
        (nominal - self.window_minus as i64, nominal + self.window_plus as i64)
    }

    pub fn in_window(&self, enrolled_at: u64, performed_day: u64) -> bool {
        let (lo, hi) = self.window(enrolled_at);
        let d = performed_day as i64;
        lo <= d && d <= hi
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScheduleOfActivities {
    pub visits: Vec<VisitDef>,
}

impl ScheduleOfActivities {
    pub fn visit(&self, visit_id: &str) -> Option<&VisitDef> {
        self.visits.iter().find(|v| v.visit_id == visit_id)
    }
}

/// Complete protocol configuration as shipped in the protocol JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialProtocol {
    pub protocol_id: String,
    pub version: String,
    pub eligibility: EligibilityCriteria,
    pub schedule: ScheduleOfActivities,
    pub consent_scopes: Vec<String>,
    pub ae_followup_days: u64,
    pub identifier_fields: Vec<String>,
    pub code_pattern: String,
}

/// Amendment payload: each present section replaces its counterpart.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolFragment {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eligibility: Option<EligibilityCriteria>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleOfActivities>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consent_scopes: Option<Vec<String>>,
}

impl TrialProtocol {
    pub fn load(path: &Path) -> Result<TrialProtocol, ProtocolError> {
        let p: TrialProtocol = serde_json::from_slice(&std::fs::read(path)?)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProtocolError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let mut seen_visit = BTreeSet::new();
        for pair in self.schedule.visits.windows(2) {
            if pair[1].nominal_day <= pair[0].nominal_day {
                return Err(ProtocolError::UnorderedVisits(pair[1].visit_id.clone()));
            }
        }
        for v in &self.schedule.visits {
            if !seen_visit.insert(v.visit_id.clone()) {
                return Err(ProtocolError::DuplicateVisit(v.visit_id.clone()));
            }
        }
        for (list, label) in [(&self.eligibility.inclusion, "inclusion"), (&self.eligibility.exclusion, "exclusion")]
        {
            let mut seen = BTreeSet::new();
            for p in list {
                if !seen.insert(p.attr().to_string()) {
                    return Err(ProtocolError::DuplicateAttribute(p.attr().to_string(), label));
                }
            }
        }
        self.check_prereq_acyclic()?;
        self.code_regex()?;
        Ok(())
    }

    /// Depth-first cycle check over the activity prerequisite graph,
    /// merged across all visits.
    fn check_prereq_acyclic(&self) -> Result<(), ProtocolError> {
        let mut edges: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for v in &self.schedule.visits {
            for (act, pres) in &v.prerequisites {
                edges.entry(act).or_default().extend(pres.iter().map(|s| s.as_str()));
            }
        }
        // colors: 0 unvisited, 1 on stack, 2 done
        let mut color: BTreeMap<&str, u8> = BTreeMap::new();
        fn visit<'a>(
            node: &'a str,
            edges: &BTreeMap<&'a str, Vec<&'a str>>,
            color: &mut BTreeMap<&'a str, u8>,
        ) -> Result<(), ProtocolError> {
            match color.get(node) {
                Some(1) => return Err(ProtocolError::PrerequisiteCycle(node.to_string())),
                Some(2) => return Ok(()),
                _ => {}
            }
            color.insert(node, 1);
            for next in edges.get(node).into_iter().flatten() {
                visit(next, edges, color)?;
            }
            color.insert(node, 2);
            Ok(())
        }
        let nodes: Vec<&str> = edges.keys().copied().collect();
        for n in nodes {
            visit(n, &edges, &mut color)?;
        }
        Ok(())
    }

    pub fn code_regex(&self) -> Result<Regex, ProtocolError> {
        Regex::new(&self.code_pattern).map_err(|e| ProtocolError::BadCodePattern(e.to_string()))
    }

    /// True iff a coded value conforms to the configured pattern.
    pub fn code_ok(&self, value: &str) -> bool {
        self.code_regex().map(|re| re.is_match(value)).unwrap_or(false)
    }

    /// Apply an amendment fragment, producing the protocol at `new_version`.
    pub fn apply_fragment(&self, fragment: &ProtocolFragment, new_version: &str) -> TrialProtocol {
        let mut next = self.clone();
        next.version = new_version.to_string();
        if let Some(e) = &fragment.eligibility {
            next.eligibility = e.clone();
        }
        if let Some(s) = &fragment.schedule {
            next.schedule = s.clone();
        }
        if let Some(c) = &fragment.consent_scopes {
            next.consent_scopes = c.clone();
        }
        next
    }

    /// Two-site fixture protocol: three visits (days 0, 28, 56), two
    /// consent scopes, SNOMED-style numeric value codes.
    pub fn fixture() -> TrialProtocol {
        TrialProtocol {
            protocol_id: "CT-2026-001".to_string(),
            version: "1.0".to_string(),
            eligibility: EligibilityCriteria {
                inclusion: vec![
                    Predicate::Range { attr: "age".into(), min: 18.0, max: 75.0 },
                    Predicate::OneOf {
                        attr: "sex".into(),
                        values: ["F", "M"].iter().map(|s| s.to_string()).collect(),
                    },
                ],
                exclusion: vec![
                    Predicate::ContainsAny {
                        attr: "conditions".into(),
                        values: ["414545008".to_string()].into_iter().collect(),
                    },
                    Predicate::ContainsAny {
                        attr: "prior_treatments".into(),
                        values: ["367336001".to_string()].into_iter().collect(),
                    },
                ],
            },
            schedule: ScheduleOfActivities {
                visits: vec![
                    VisitDef {
                        visit_id: "baseline".into(),
                        nominal_day: 0,
                        window_minus: 0,
                        window_plus: 3,
                        required_activities: vec!["sample_A".into()],
                        prerequisites: BTreeMap::new(),
                    },
                    VisitDef {
                        visit_id: "week4".into(),
                        nominal_day: 28,
                        window_minus: 7,
                        window_plus: 7,
                        required_activities: vec!["lab_B".into()],
                        prerequisites: [("lab_B".to_string(), vec!["sample_A".to_string()])]
                            .into_iter()
                            .collect(),
                    },
                    VisitDef {
                        visit_id: "week8".into(),
                        nominal_day: 56,
                        window_minus: 7,
                        window_plus: 7,
                        required_activities: vec!["outcome_questionnaire".into()],
                        prerequisites: [("outcome_questionnaire".to_string(), vec!["lab_B".to_string()])]
                            .into_iter()
                            .collect(),
                    },
                ],
            },
            consent_scopes: vec!["primary".into(), "secondary_analysis".into()],
            ae_followup_days: 14,
            identifier_fields: vec!["name".into(), "dob".into(), "mrn".into()],
            code_pattern: "^[0-9]{6,18}$".to_string(),
        }
    }
}
