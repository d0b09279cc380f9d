//! Soundex and Metaphone codes for package names. Non-letters are ignored,
//! so names made only of digits and delimiters encode to an empty string.

fn letters(s: &str) -> Vec<char> {
    s.chars()
        .filter(char::is_ascii_alphabetic)
        .map(|c| c.to_ascii_uppercase())
        .collect()
}

fn soundex_digit(c: char) -> Option<char> {
    match c {
        'B' | 'F' | 'P' | 'V' => Some('1'),
        'C' | 'G' | 'J' | 'K' | 'Q' | 'S' | 'X' | 'Z' => Some('2'),
        'D' | 'T' => Some('3'),
        'L' => Some('4'),
        'M' | 'N' => Some('5'),
        'R' => Some('6'),
        _ => None,
    }
}

/// American Soundex, four characters.
pub fn soundex(s: &str) -> String {
    let chars = letters(s);
    let Some(&first) = chars.first() else {
        return String::new();
    };
    let mut code = String::with_capacity(4);
    code.push(first);
    let mut last = soundex_digit(first);
    for &c in &chars[1..] {
        if code.len() == 4 {
            break;
        }
        match soundex_digit(c) {
            Some(d) => {
                if last != Some(d) {
                    code.push(d);
                }
                last = Some(d);
            }
            // H and W do not separate equal codes; vowels do.
            None if c == 'H' || c == 'W' => {}
            None => last = None,
        }
    }
    while code.len() < 4 {
        code.push('0');
    }
    code
}

fn is_vowel(c: Option<char>) -> bool {
    matches!(c, Some('A' | 'E' | 'I' | 'O' | 'U'))
}

/// Original Metaphone (Philips, 1990) without a length cap.
pub fn metaphone(s: &str) -> String {
    let w = letters(s);
    if w.is_empty() {
        return String::new();
    }
    let at = |i: isize| -> Option<char> {
        if i < 0 {
            None
        } else {
            w.get(i as usize).copied()
        }
    };
    let mut out = String::new();
    let mut i = 0usize;

    match (w[0], at(1)) {
        ('A', Some('E')) => {
            out.push('E');
            i = 2;
        }
        ('G' | 'K' | 'P', Some('N')) => {
            out.push('N');
            i = 2;
        }
        ('W', Some('R')) => {
            out.push('R');
            i = 2;
        }
        ('W', Some('H')) => {
            out.push('W');
            i = 2;
        }
        ('X', _) => {
            out.push('S');
            i = 1;
        }
        _ => {}
    }

    while i < w.len() {
        let c = w[i];
        let ii = i as isize;
        let prev = at(ii - 1);
        let next = at(ii + 1);
        let next2 = at(ii + 2);
        if c != 'C' && prev == Some(c) {
            i += 1;
            continue;
        }
        match c {
            'A' | 'E' | 'I' | 'O' | 'U' => {
                if i == 0 {
                    out.push(c);
                }
            }
            'B' => {
                if !(prev == Some('M') && next.is_none()) {
                    out.push('B');
                }
            }
            'C' => {
                if next == Some('I') && next2 == Some('A') {
                    out.push('X');
                } else if next == Some('H') {
                    if prev == Some('S') {
                        out.push('K');
                    } else {
                        out.push('X');
                    }
                    i += 1;
                } else if matches!(next, Some('I' | 'E' | 'Y')) {
                    if prev != Some('S') {
                        out.push('S');
                    }
                } else {
                    out.push('K');
                }
            }
            'D' => {
                if next == Some('G') && matches!(next2, Some('E' | 'Y' | 'I')) {
                    out.push('J');
                    i += 1;
                } else {
                    out.push('T');
                }
            }
            'G' => {
                let silent_gh = next == Some('H') && next2.is_some() && !is_vowel(next2);
                let silent_gn = next == Some('N')
                    && (next2.is_none()
                        || (next2 == Some('E') && at(ii + 3) == Some('D') && at(ii + 4).is_none()));
                if silent_gh || silent_gn {
                    // silent
                } else if matches!(next, Some('I' | 'E' | 'Y')) && prev != Some('G') {
                    out.push('J');
                } else {
                    out.push('K');
                }
            }
            'H' => {
                let after_modifier = matches!(prev, Some('C' | 'S' | 'P' | 'T' | 'G'));
                if !after_modifier && !(is_vowel(prev) && !is_vowel(next)) {
                    out.push('H');
                }
            }
            'K' => {
                if prev != Some('C') {
                    out.push('K');
                }
            }
            'P' => {
                if next == Some('H') {
                    out.push('F');
                    i += 1;
                } else {
                    out.push('P');
                }
            }
            'Q' => out.push('K'),
            'S' => {
                if next == Some('H') {
                    out.push('X');
                    i += 1;
                } else if next == Some('I') && matches!(next2, Some('O' | 'A')) {
                    out.push('X');
                } else {
                    out.push('S');
                }
            }
            'T' => {
                if next == Some('I') && matches!(next2, Some('O' | 'A')) {
                    out.push('X');
                } else if next == Some('H') {
                    out.push('0');
                    i += 1;
                } else if !(next == Some('C') && next2 == Some('H')) {
                    out.push('T');
                }
            }
            'V' => out.push('F'),
            'W' | 'Y' => {
                if is_vowel(next) {
                    out.push(c);
                }
            }
            'X' => out.push_str("KS"),
            'Z' => out.push('S'),
            other => out.push(other),
        }
        i += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soundex_reference_codes() {
        assert_eq!(soundex("Robert"), "R163");
        assert_eq!(soundex("Rupert"), "R163");
        assert_eq!(soundex("Ashcraft"), "A261");
        assert_eq!(soundex("Tymczak"), "T522");
        assert_eq!(soundex("Pfister"), "P236");
        assert_eq!(soundex("Honeyman"), "H555");
        assert_eq!(soundex("eslint"), "E245");
        assert_eq!(soundex("123"), "");
    }

    #[test]
    fn metaphone_reference_codes() {
        assert_eq!(metaphone("Thompson"), "0MPSN");
        assert_eq!(metaphone("knight"), "NT");
        assert_eq!(metaphone("phone"), "FN");
        assert_eq!(metaphone("school"), "SKL");
        assert_eq!(metaphone("xylophone"), "SLFN");
        assert_eq!(metaphone("lodash"), "LTX");
        assert_eq!(metaphone("crypto"), metaphone("krypto"));
        assert_eq!(metaphone("42"), "");
    }
}
