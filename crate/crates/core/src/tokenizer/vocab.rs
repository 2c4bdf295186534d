use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
const N_SPECIAL: usize = 3;

/// What a token id stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Pad,
    Bos,
    Eos,
    User(u32),
    Behavior(u32),
    /// `Digit(position, value)`.
    Digit(usize, u32),
}

/// Partitioned token-id space:
/// `[PAD, BOS, EOS] ++ users ++ behaviors ++ digit range 1 ++ ... ++ digit range m`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    n_users: usize,
    n_behaviors: usize,
    digit_cards: Vec<usize>,
    digit_offsets: Vec<usize>,
}

impl Vocabulary {
    pub fn new(n_users: usize, n_behaviors: usize, digit_cards: Vec<usize>) -> Result<Self> {
        if n_users == 0 || n_behaviors == 0 || digit_cards.is_empty() || digit_cards.contains(&0) {
            return Err(Error::Config(format!(
                "vocabulary needs users, behaviors and non-empty digit ranges \
                 (users {n_users}, behaviors {n_behaviors}, digits {digit_cards:?})"
            )));
        }
        let mut offsets = Vec::with_capacity(digit_cards.len());
        let mut next = N_SPECIAL + n_users + n_behaviors;
        for &c in &digit_cards {
            offsets.push(next);
            next += c;
        }
        Ok(Self {
            n_users,
            n_behaviors,
            digit_cards,
            digit_offsets: offsets,
        })
    }

    pub fn size(&self) -> usize {
        N_SPECIAL + self.n_users + self.n_behaviors + self.digit_cards.iter().sum::<usize>()
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_behaviors(&self) -> usize {
        self.n_behaviors
    }

    /// Digits per item.
    pub fn m(&self) -> usize {
        self.digit_cards.len()
    }

    pub fn digit_cards(&self) -> &[usize] {
        &self.digit_cards
    }

    /// Tokens per interaction tuple: one behavior plus `m` digits.
    pub fn tuple_len(&self) -> usize {
        1 + self.m()
    }

    pub fn user_token_for_bucket(&self, bucket: u32) -> u32 {
        debug_assert!((bucket as usize) < self.n_users);
        (N_SPECIAL as u32) + bucket
    }

    /// Hashes a raw user id into one of `U` buckets.
    pub fn user_token(&self, raw_user: &str) -> u32 {
        self.user_token_for_bucket(hash_user(raw_user, self.n_users))
    }

    pub fn behavior_token(&self, b: u32) -> Result<u32> {
        if b as usize >= self.n_behaviors {
            return Err(Error::Vocabulary(format!(
                "behavior {b} is out of range for {} behaviors",
                self.n_behaviors
            )));
        }
        Ok((N_SPECIAL + self.n_users) as u32 + b)
    }

    pub fn behavior_range(&self) -> std::ops::Range<u32> {
        let start = (N_SPECIAL + self.n_users) as u32;
        start..start + self.n_behaviors as u32
    }

    pub fn digit_token(&self, position: usize, value: u32) -> Result<u32> {
        let card = *self.digit_cards.get(position).ok_or_else(|| {
            Error::Vocabulary(format!("digit position {position} does not exist"))
        })?;
        if value as usize >= card {
            return Err(Error::Vocabulary(format!(
                "digit {value} at position {position} exceeds cardinality {card}"
            )));
        }
        Ok((self.digit_offsets[position] + value as usize) as u32)
    }

    pub fn digit_range(&self, position: usize) -> std::ops::Range<u32> {
        let start = self.digit_offsets[position] as u32;
        start..start + self.digit_cards[position] as u32
    }

    /// Total: every id below `size()` has exactly one role.
    pub fn role(&self, token: u32) -> Result<Role> {
        let t = token as usize;
        let users_end = N_SPECIAL + self.n_users;
        let beh_end = users_end + self.n_behaviors;
        Ok(match t {
            0 => Role::Pad,
            1 => Role::Bos,
            2 => Role::Eos,
            _ if t < users_end => Role::User((t - N_SPECIAL) as u32),
            _ if t < beh_end => Role::Behavior((t - users_end) as u32),
            _ if t < self.size() => {
                let p = self.digit_offsets.partition_point(|&o| o <= t) - 1;
                Role::Digit(p, (t - self.digit_offsets[p]) as u32)
            }
            _ => {
                return Err(Error::Vocabulary(format!(
                    "token {token} is outside the vocabulary of size {}",
                    self.size()
                )))
            }
        })
    }

    pub fn token(&self, role: Role) -> Result<u32> {
        match role {
            Role::Pad => Ok(PAD),
            Role::Bos => Ok(BOS),
            Role::Eos => Ok(EOS),
            Role::User(u) if (u as usize) < self.n_users => Ok(self.user_token_for_bucket(u)),
            Role::User(u) => Err(Error::Vocabulary(format!(
                "user bucket {u} is out of range"
            ))),
            Role::Behavior(b) => self.behavior_token(b),
            Role::Digit(p, v) => self.digit_token(p, v),
        }
    }

    /// `[behavior, digit_1, ..., digit_m]` token ids.
    pub fn tokenize_interaction(&self, behavior: u32, code: &[u32]) -> Result<Vec<u32>> {
        if code.len() != self.m() {
            return Err(Error::Vocabulary(format!(
                "code has {} digits, expected {}",
                code.len(),
                self.m()
            )));
        }
        let mut out = Vec::with_capacity(self.tuple_len());
        out.push(self.behavior_token(behavior)?);
        for (p, &d) in code.iter().enumerate() {
            out.push(self.digit_token(p, d)?);
        }
        Ok(out)
    }

    /// Inverse of [`tokenize_interaction`](Self::tokenize_interaction).
    pub fn detokenize(&self, tokens: &[u32]) -> Result<(u32, Vec<u32>)> {
        if tokens.len() != self.tuple_len() {
            return Err(Error::Sequence(format!(
                "tuple has {} tokens, expected {}",
                tokens.len(),
                self.tuple_len()
            )));
        }
        let Role::Behavior(b) = self.role(tokens[0])? else {
            return Err(Error::Sequence(format!(
                "token {} is not a behavior",
                tokens[0]
            )));
        };
        let mut code = Vec::with_capacity(self.m());
        for (p, &t) in tokens[1..].iter().enumerate() {
            match self.role(t)? {
                Role::Digit(q, v) if q == p => code.push(v),
                other => {
                    return Err(Error::Sequence(format!(
                        "token {t} at digit position {p} has role {other:?}"
                    )))
                }
            }
        }
        Ok((b, code))
    }
}

/// First eight bytes of SHA-256 of the raw id, modulo `buckets`.
pub fn hash_user(raw_user: &str, buckets: usize) -> u32 {
    let digest = Sha256::digest(raw_user.as_bytes());
    let word = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    (word % buckets as u64) as u32
}
