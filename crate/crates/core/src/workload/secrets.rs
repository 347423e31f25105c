use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Template families for planted secrets, aligned with the detection
/// category taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecretFamily {
    Ssn,
    Passport,
    Phone,
    Email,
    Ipv4,
    CreditCard,
    BankAccount,
    Mac,
    Imei,
    Blacklisted,
    /// Street address: no shipped rule covers it; Tier-2 and up only.
    Address,
    /// Digits that are sensitive only together with an earlier setup turn.
    ContextAccount,
}

impl SecretFamily {
    /// Families planted as standalone secrets.
    pub const ALWAYS: [SecretFamily; 11] = [
        SecretFamily::Ssn,
        SecretFamily::Passport,
        SecretFamily::Phone,
        SecretFamily::Email,
        SecretFamily::Ipv4,
        SecretFamily::CreditCard,
        SecretFamily::BankAccount,
        SecretFamily::Mac,
        SecretFamily::Imei,
        SecretFamily::Blacklisted,
        SecretFamily::Address,
    ];

    /// Families whose every position is drawn from a 10-symbol alphabet.
    pub const PROBEABLE: [SecretFamily; 6] = [
        SecretFamily::Ssn,
        SecretFamily::Phone,
        SecretFamily::CreditCard,
        SecretFamily::BankAccount,
        SecretFamily::Imei,
        SecretFamily::Address,
    ];

    pub fn category(self) -> &'static str {
        match self {
            SecretFamily::Ssn | SecretFamily::Passport => "Identity Information",
            SecretFamily::Phone | SecretFamily::Email => "Basic Information",
            SecretFamily::Ipv4 => "System/Network Identification",
            SecretFamily::CreditCard | SecretFamily::BankAccount | SecretFamily::ContextAccount => {
                "Financial Info"
            }
            SecretFamily::Mac | SecretFamily::Imei => "Hardware Device Information",
            SecretFamily::Blacklisted => "Blacklisted Term",
            SecretFamily::Address => "Location Information",
        }
    }

    /// Whether a shipped Tier-1 rule matches this family's text form.
    pub fn tier1_covered(self) -> bool {
        !matches!(self, SecretFamily::Address | SecretFamily::ContextAccount)
    }
}

/// Symbol class of one secret position; decoys come from the same class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymbolClass {
    Digit,
    Hex,
    Lower,
    Upper,
    /// Structural character known to the attacker (separators).
    Fixed,
}

impl SymbolClass {
    fn alphabet(self) -> &'static [u8] {
        match self {
            SymbolClass::Digit => b"0123456789",
            SymbolClass::Hex => b"0123456789abcdef",
            SymbolClass::Lower => b"abcdefghijklmnopqrstuvwxyz",
            SymbolClass::Upper => b"ABCDEFGHIJKLMNOPQRSTUVWXYZ",
            SymbolClass::Fixed => b"",
        }
    }
}

/// A rendered secret: `lead` + `value`, with per-byte symbol classes of
/// `value`. Only `value` is ground-truth sensitive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretText {
    pub family: SecretFamily,
    pub lead: String,
    pub value: String,
    pub classes: Vec<SymbolClass>,
    /// Setup sentence for context-dependent secrets; its cue must appear in
    /// the history for the value to count as sensitive.
    pub setup: Option<(String, String)>,
}

const BANKS: [&str; 6] = ["BankX", "Northbank", "Citrine Savings", "Harbor Credit", "Lumen Bank", "Orchard Trust"];
const STREETS: [&str; 5] = ["Elm Street", "Oak Avenue", "Maple Road", "Cedar Lane", "Birch Way"];
const NAMES: [&str; 8] = ["alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi"];
const CODES: [&str; 1] = ["PROJECT-ORION"];

struct Builder {
    value: String,
    classes: Vec<SymbolClass>,
}

impl Builder {
    fn new() -> Self {
        Self {
            value: String::new(),
            classes: Vec::new(),
        }
    }

    fn draw<R: Rng>(&mut self, rng: &mut R, class: SymbolClass, n: usize) {
        let a = class.alphabet();
        for _ in 0..n {
            self.value.push(a[rng.random_range(0..a.len())] as char);
            self.classes.push(class);
        }
    }

    fn digits_nonzero_lead<R: Rng>(&mut self, rng: &mut R, n: usize) {
        self.value.push(char::from(b'1' + rng.random_range(0..9u8)));
        self.classes.push(SymbolClass::Digit);
        self.draw(rng, SymbolClass::Digit, n - 1);
    }

    fn fixed(&mut self, s: &str) {
        self.value.push_str(s);
        self.classes.extend(std::iter::repeat_n(SymbolClass::Fixed, s.len()));
    }
}

/// Render one secret of `family`.
pub fn render<R: Rng>(family: SecretFamily, rng: &mut R) -> SecretText {
    use SymbolClass::*;
    let mut b = Builder::new();
    let mut setup = None;
    let lead = match family {
        SecretFamily::Ssn => {
            b.digits_nonzero_lead(rng, 3);
            b.fixed("-");
            b.draw(rng, Digit, 2);
            b.fixed("-");
            b.draw(rng, Digit, 4);
            "my ssn is "
        }
        SecretFamily::Passport => {
            b.draw(rng, Upper, 1);
            b.draw(rng, Digit, 7);
            "my passport no. "
        }
        SecretFamily::Phone => {
            b.digits_nonzero_lead(rng, 3);
            b.fixed("-");
            b.draw(rng, Digit, 3);
            b.fixed("-");
            b.draw(rng, Digit, 4);
            "call me at "
        }
        SecretFamily::Email => {
            b.fixed(NAMES[rng.random_range(0..NAMES.len())]);
            b.fixed(".");
            b.draw(rng, Lower, 5);
            b.fixed("@example.com");
            "write to "
        }
        SecretFamily::Ipv4 => {
            for i in 0..4 {
                if i > 0 {
                    b.fixed(".");
                }
                b.digits_nonzero_lead(rng, 2);
            }
            "the server ip is "
        }
        SecretFamily::CreditCard => {
            for i in 0..4 {
                if i > 0 {
                    b.fixed(" ");
                }
                b.draw(rng, Digit, 4);
            }
            "my card number is "
        }
        SecretFamily::BankAccount => {
            b.draw(rng, Digit, 10);
            "my account number: "
        }
        SecretFamily::Mac => {
            for i in 0..6 {
                if i > 0 {
                    b.fixed(":");
                }
                b.draw(rng, Hex, 2);
            }
            "device mac "
        }
        SecretFamily::Imei => {
            b.digits_nonzero_lead(rng, 15);
            "phone IMEI "
        }
        SecretFamily::Blacklisted => {
            b.fixed(CODES[rng.random_range(0..CODES.len())]);
            "internal codename "
        }
        SecretFamily::Address => {
            b.digits_nonzero_lead(rng, 4);
            b.fixed(" ");
            b.fixed(STREETS[rng.random_range(0..STREETS.len())]);
            "i live at "
        }
        SecretFamily::ContextAccount => {
            b.draw(rng, Digit, 8);
            let bank = BANKS[rng.random_range(0..BANKS.len())];
            setup = Some((format!("i have an account at {bank}."), bank.to_string()));
            "the number is "
        }
    };
    SecretText {
        family,
        lead: lead.to_string(),
        value: b.value,
        classes: b.classes,
        setup,
    }
}

impl SecretText {
    /// Lead-in plus value, as it appears in a prompt.
    pub fn sentence(&self) -> String {
        format!("{}{}", self.lead, self.value)
    }

    /// Per-position candidate bytes: the true byte plus up to `k - 1`
    /// decoys of the same class, shuffled. Fixed positions have one
    /// candidate.
    pub fn candidate_sets<R: Rng>(&self, k: usize, rng: &mut R) -> Vec<Vec<u8>> {
        self.value
            .bytes()
            .zip(&self.classes)
            .map(|(truth, class)| {
                let mut decoys: Vec<u8> = class
                    .alphabet()
                    .iter()
                    .copied()
                    .filter(|&c| c != truth)
                    .collect();
                decoys.shuffle(rng);
                decoys.truncate(k.saturating_sub(1));
                decoys.push(truth);
                decoys.shuffle(rng);
                decoys
            })
            .collect()
    }
}

/// Generator-aligned Tier-1 corpus: sentences from every covered family,
/// each labeled with the category a rule must report.
pub fn tier1_corpus<R: Rng>(n: usize, rng: &mut R) -> Vec<(String, &'static str)> {
    let covered: Vec<SecretFamily> = SecretFamily::ALWAYS
        .into_iter()
        .filter(|f| f.tier1_covered())
        .collect();
    (0..n)
        .map(|i| {
            let f = covered[i % covered.len()];
            let s = render(f, rng);
            (format!("note: {} thanks", s.sentence()), f.category())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::PatternSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn covered_families_fire_and_others_do_not() {
        let rules = PatternSet::defaults();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for f in SecretFamily::ALWAYS.into_iter().chain([SecretFamily::ContextAccount]) {
            for _ in 0..200 {
                let s = render(f, &mut rng);
                let v = rules.scan(&s.sentence());
                assert_eq!(v.sensitive, f.tier1_covered(), "{f:?}: {}", s.sentence());
                if v.sensitive {
                    assert!(v.categories.iter().any(|c| c == f.category()), "{f:?}");
                }
            }
        }
    }

    #[test]
    fn candidate_sets_contain_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for f in SecretFamily::PROBEABLE {
            let s = render(f, &mut rng);
            let sets = s.candidate_sets(10, &mut rng);
            assert_eq!(sets.len(), s.value.len());
            for ((set, truth), class) in sets.iter().zip(s.value.bytes()).zip(&s.classes) {
                assert!(set.contains(&truth));
                match class {
                    SymbolClass::Fixed => assert_eq!(set.len(), 1),
                    _ => assert_eq!(set.len(), 10),
                }
            }
        }
    }

    #[test]
    fn context_secret_needs_setup() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = render(SecretFamily::ContextAccount, &mut rng);
        let (setup, cue) = s.setup.clone().unwrap();
        assert!(setup.contains(&cue));
        assert!(!PatternSet::defaults().scan(&s.sentence()).sensitive);
    }
}
