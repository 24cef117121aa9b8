use serde::{Deserialize, Serialize};

/// One named check with a numeric witness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub witness: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub worst_site: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn push(&mut self, name: impl Into<String>, pass: bool, witness: f64) -> &mut Check {
        self.checks.push(Check {
            name: name.into(),
            pass,
            witness,
            worst_site: None,
            detail: None,
        });
        self.checks.last_mut().unwrap()
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

impl Check {
    pub fn at_site(&mut self, site: Option<usize>) -> &mut Self {
        self.worst_site = site;
        self
    }

    pub fn with_detail(&mut self, detail: impl Into<String>) -> &mut Self {
        self.detail = Some(detail.into());
        self
    }
}
