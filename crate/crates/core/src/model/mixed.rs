use crate::corpus::TokenId;

/// One decoder input position: a token looked up in the embedding table, or
/// a raw hidden-size vector injected in its place.
#[derive(Debug, Clone, PartialEq)]
pub enum Item<T> {
    Token(TokenId),
    Vector(Vec<T>),
}

pub type MixedSequence<T> = Vec<Item<T>>;

pub fn tokens<T>(ids: &[TokenId]) -> MixedSequence<T> {
    ids.iter().map(|&t| Item::Token(t)).collect()
}
