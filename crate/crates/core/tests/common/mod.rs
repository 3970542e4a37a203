#![allow(dead_code)]

/// Decision-text sentences with the 0-based paragraph indices they cite,
/// each against a case with `n_facts` paragraphs.
pub const SILVER_FIXTURES: &[(&str, usize, &[usize])] = &[
    ("See paragraphs 2 and 4.", 10, &[1, 3]),
    ("see paragraph 7 above", 10, &[6]),
    ("see paragraphs 10-12", 15, &[9, 10, 11]),
    ("As noted in paragraph 1, the applicant was arrested.", 5, &[0]),
    ("See PARAGRAPHS 3 AND 5 above.", 8, &[2, 4]),
    ("See paragraphs 2, 5 and 9.", 10, &[1, 4, 8]),
    ("See paragraphs 2, 5, and 9.", 10, &[1, 4, 8]),
    ("See paragraphs 4–6 above.", 10, &[3, 4, 5]),
    ("See paragraphs 3 - 5.", 10, &[2, 3, 4]),
    ("See paragraphs 1-2 and 8-9.", 10, &[0, 1, 7, 8]),
    ("See paras. 6 and 7.", 10, &[5, 6]),
    ("See para. 3.", 10, &[2]),
    ("See paragraph 14 above.", 10, &[]),
    ("See paragraphs 9-13.", 10, &[8, 9]),
    ("See Draci v. Russia, no. 25346/02, paragraph 45.", 60, &[]),
    ("See, mutatis mutandis, Kudla v. Poland [GC], no. 30210/96, paragraphs 92-94.", 100, &[]),
    ("The applicant relied on paragraph 1 of Article 6 of the Convention.", 10, &[]),
    ("Article 5, paragraph 3 requires prompt judicial review.", 10, &[]),
    ("The facts are set out in paragraph 2; see also paragraphs 5 and 6.", 10, &[1, 4, 5]),
    ("See paragraph 3 above. The Court refers to Smith v. Turkey, no. 1234/05, paragraph 8.", 10, &[2]),
    ("No references appear in this sentence.", 10, &[]),
    ("See paragraph 0.", 10, &[]),
    ("As described in paragraphs 4 & 6, the search took place at night.", 10, &[3, 5]),
];
