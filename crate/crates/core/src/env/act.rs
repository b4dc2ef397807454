use std::fmt;

use super::domain::{DomainSpec, ANSWER_CARDINALITY};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Actor {
    System,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActType {
    Greet,
    Request,
    Inform,
    Confirm,
    Affirm,
    Deny,
    Goodbye,
}

impl ActType {
    fn name(self) -> &'static str {
        match self {
            ActType::Greet => "greet",
            ActType::Request => "request",
            ActType::Inform => "inform",
            ActType::Confirm => "confirm",
            ActType::Affirm => "affirm",
            ActType::Deny => "deny",
            ActType::Goodbye => "goodbye",
        }
    }
}

/// A slot of the current domain, by position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    User(usize),
    System(usize),
}

/// One structured act exchanged between system and user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DialogAct {
    pub actor: Actor,
    pub act_type: ActType,
    pub slot: Option<Slot>,
    pub value: Option<usize>,
}

impl DialogAct {
    fn new(actor: Actor, act_type: ActType, slot: Option<Slot>, value: Option<usize>) -> Self {
        Self { actor, act_type, slot, value }
    }

    pub fn greet(actor: Actor) -> Self {
        Self::new(actor, ActType::Greet, None, None)
    }

    pub fn goodbye(actor: Actor) -> Self {
        Self::new(actor, ActType::Goodbye, None, None)
    }

    pub fn request(actor: Actor, slot: Slot) -> Self {
        Self::new(actor, ActType::Request, Some(slot), None)
    }

    pub fn confirm(actor: Actor, slot: Slot, value: usize) -> Self {
        Self::new(actor, ActType::Confirm, Some(slot), Some(value))
    }

    pub fn inform(actor: Actor, slot: Slot, value: usize) -> Self {
        Self::new(actor, ActType::Inform, Some(slot), Some(value))
    }

    pub fn affirm(actor: Actor) -> Self {
        Self::new(actor, ActType::Affirm, None, None)
    }

    pub fn deny(actor: Actor) -> Self {
        Self::new(actor, ActType::Deny, None, None)
    }

    /// Checks the structural rules and that slot/value references fit
    /// `domain`.
    pub fn validate(&self, domain: &DomainSpec) -> Result<()> {
        let bad = |why: &str| Err(Error::MalformedAct(format!("{}: {why}", self.describe(domain))));
        match self.act_type {
            ActType::Greet | ActType::Goodbye | ActType::Affirm | ActType::Deny => {
                if self.slot.is_some() || self.value.is_some() {
                    return bad("takes no slot or value");
                }
            }
            ActType::Request => {
                if self.slot.is_none() || self.value.is_some() {
                    return bad("request carries a slot and no value");
                }
            }
            ActType::Confirm | ActType::Inform => {
                if self.slot.is_none() || self.value.is_none() {
                    return bad("needs a slot and a value");
                }
            }
        }
        if let (Some(slot), value) = (self.slot, self.value) {
            match slot {
                Slot::User(i) => {
                    let Some(s) = domain.user_slots.get(i) else {
                        return bad("unknown user slot");
                    };
                    if value.is_some_and(|v| v >= s.cardinality) {
                        return bad("value out of range");
                    }
                }
                Slot::System(j) => {
                    if j >= domain.system_slots.len() {
                        return bad("unknown system slot");
                    }
                    if value.is_some_and(|v| v >= ANSWER_CARDINALITY) {
                        return bad("answer out of range");
                    }
                }
            }
        }
        Ok(())
    }

    /// Human-readable form using slot names, e.g. `inform(food=3)`.
    pub fn describe(&self, domain: &DomainSpec) -> String {
        let slot = self.slot.map(|s| match s {
            Slot::User(i) => domain.user_slots.get(i).map_or(format!("u{i}"), |s| s.name.clone()),
            Slot::System(j) => domain.system_slots.get(j).cloned().unwrap_or(format!("s{j}")),
        });
        match (slot, self.value) {
            (Some(s), Some(v)) => format!("{}({s}={v})", self.act_type.name()),
            (Some(s), None) => format!("{}({s})", self.act_type.name()),
            _ => format!("{}()", self.act_type.name()),
        }
    }
}

impl fmt::Display for DialogAct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let slot = match self.slot {
            Some(Slot::User(i)) => format!("u{i}"),
            Some(Slot::System(j)) => format!("s{j}"),
            None => String::new(),
        };
        match self.value {
            Some(v) => write!(f, "{}({slot}={v})", self.act_type.name()),
            None => write!(f, "{}({slot})", self.act_type.name()),
        }
    }
}

/// What the user says in one turn: a single act, or a denial followed by a
/// corrective inform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UserResponse {
    pub act: DialogAct,
    pub reinform: Option<DialogAct>,
}

impl UserResponse {
    pub fn single(act: DialogAct) -> Self {
        Self { act, reinform: None }
    }

    pub fn acts(&self) -> impl Iterator<Item = &DialogAct> {
        std::iter::once(&self.act).chain(self.reinform.iter())
    }

    pub fn describe(&self, domain: &DomainSpec) -> String {
        self.acts().map(|a| a.describe(domain)).collect::<Vec<_>>().join("+")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structural_rules() {
        let d = DomainSpec::rest();
        assert!(DialogAct::request(Actor::System, Slot::User(1)).validate(&d).is_ok());
        assert!(DialogAct::confirm(Actor::System, Slot::User(1), 12).validate(&d).is_ok());
        assert!(DialogAct::confirm(Actor::System, Slot::User(1), 13).validate(&d).is_err());
        assert!(DialogAct::inform(Actor::System, Slot::System(2), 19).validate(&d).is_ok());
        assert!(DialogAct::inform(Actor::System, Slot::System(3), 0).validate(&d).is_err());
        let bad_affirm = DialogAct { value: Some(1), ..DialogAct::affirm(Actor::User) };
        assert!(bad_affirm.validate(&d).is_err());
        let bare_request = DialogAct { slot: None, ..DialogAct::request(Actor::System, Slot::User(0)) };
        assert!(bare_request.validate(&d).is_err());
    }

    #[test]
    fn describe_uses_slot_names() {
        let d = DomainSpec::rest();
        assert_eq!(DialogAct::inform(Actor::User, Slot::User(1), 3).describe(&d), "inform(food=3)");
        assert_eq!(DialogAct::request(Actor::System, Slot::User(0)).describe(&d), "request(loc)");
    }
}
