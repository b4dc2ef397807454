//! Template rendering of dialog acts into token sequences.

use super::act::{ActType, Actor, DialogAct, Slot, UserResponse};
use super::domain::{DomainSpec, NlgStyle};
use crate::{Error, Result};

/// Upper bound on the tokens any single template expansion produces.
pub const MAX_TEMPLATE_TOKENS: usize = 12;

const SLOT: &str = "<slot>";
const VALUE: &str = "<value>";

fn template(style: NlgStyle, actor: Actor, act: ActType) -> Option<&'static [&'static str]> {
    use ActType::*;
    use Actor::*;
    let t: &'static [&'static str] = match (style, actor, act) {
        (NlgStyle::Standard, System, Greet) => &["hello", ",", "how", "can", "i", "help", "?"],
        (NlgStyle::Standard, System, Request) => &["which", SLOT, "do", "you", "want", "?"],
        (NlgStyle::Standard, System, Confirm) => &["do", "you", "want", VALUE, "for", SLOT, "?"],
        (NlgStyle::Standard, System, Inform) => &["the", SLOT, "is", VALUE, "."],
        (NlgStyle::Standard, System, Goodbye) => &["goodbye", ",", "have", "a", "nice", "day", "."],
        (NlgStyle::Standard, User, Greet) => &["hi", ",", "i", "need", "some", "help", "."],
        (NlgStyle::Standard, User, Inform) => &["i", "want", VALUE, "for", SLOT, "."],
        (NlgStyle::Standard, User, Affirm) => &["yes", ",", "that", "is", "right", "."],
        (NlgStyle::Standard, User, Deny) => &["no", ",", "that", "is", "wrong", "."],
        (NlgStyle::Standard, User, Goodbye) => &["thanks", ",", "bye", "."],
        (NlgStyle::Alternate, System, Greet) => &["greetings", "!", "what", "shall", "this", "assistant", "find"],
        (NlgStyle::Alternate, System, Request) => &["kindly", "specify", "preferred", SLOT, "please"],
        (NlgStyle::Alternate, System, Confirm) => &["shall", SLOT, "be", VALUE, "then"],
        (NlgStyle::Alternate, System, Inform) => &["regarding", SLOT, "answer", "equals", VALUE],
        (NlgStyle::Alternate, System, Goodbye) => &["farewell", "and", "enjoy"],
        (NlgStyle::Alternate, User, Greet) => &["hey", "assistant", "assist", "me"],
        (NlgStyle::Alternate, User, Inform) => &["my", SLOT, "choice", ":", VALUE],
        (NlgStyle::Alternate, User, Affirm) => &["correct", "indeed"],
        (NlgStyle::Alternate, User, Deny) => &["incorrect", "actually"],
        (NlgStyle::Alternate, User, Goodbye) => &["cheers", "then"],
        _ => return None,
    };
    Some(t)
}

pub(crate) fn value_token(domain: &DomainSpec, slot: Slot, value: usize) -> String {
    match slot {
        Slot::User(i) => format!("{}_{}_{}", domain.user_slots[i].name, domain.value_vocab_seed, value),
        Slot::System(_) => format!("ans_{value}"),
    }
}

fn slot_token(domain: &DomainSpec, slot: Slot) -> &str {
    match slot {
        Slot::User(i) => &domain.user_slots[i].name,
        Slot::System(j) => &domain.system_slots[j],
    }
}

/// Expands `act` into tokens using `style`'s templates. Values render as
/// slot-qualified symbols from `domain`'s value vocabulary.
pub fn render_utterance(act: &DialogAct, style: NlgStyle, domain: &DomainSpec) -> Result<Vec<String>> {
    act.validate(domain)?;
    let t = template(style, act.actor, act.act_type).ok_or_else(|| {
        Error::MalformedAct(format!("no template for {:?} {}", act.actor, act.describe(domain)))
    })?;
    Ok(t.iter()
        .map(|&w| match w {
            SLOT => slot_token(domain, act.slot.expect("validated")).to_string(),
            VALUE => value_token(domain, act.slot.expect("validated"), act.value.expect("validated")),
            w => w.to_string(),
        })
        .collect())
}

/// Renders every act of a user turn, in order.
pub fn render_user_response(resp: &UserResponse, style: NlgStyle, domain: &DomainSpec) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for act in resp.acts() {
        out.extend(render_utterance(act, style, domain)?);
    }
    Ok(out)
}

/// Every template word (excluding placeholders) of a style.
#[cfg(test)]
pub(crate) fn template_words(style: NlgStyle) -> Vec<&'static str> {
    use ActType::*;
    let mut words = Vec::new();
    for actor in [Actor::System, Actor::User] {
        for act in [Greet, Request, Inform, Confirm, Affirm, Deny, Goodbye] {
            if let Some(t) = template(style, actor, act) {
                words.extend(t.iter().filter(|w| **w != SLOT && **w != VALUE));
            }
        }
    }
    words.sort_unstable();
    words.dedup();
    words
}
