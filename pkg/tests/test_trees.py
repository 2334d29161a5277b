"""Combinatorics of skeleton trees, numberings, and moment coefficients."""

import math

import pytest

from brwre_lab.errors import CapacityError, DomainError, ParameterError
from brwre_lab.trees import (
    Numbering,
    SkeletonTree,
    c_coeff,
    catalan,
    enumerate_numberings,
    enumerate_trees,
    term_index,
    tree_from_encoding,
)


@pytest.mark.parametrize("k", range(0, 9))
def test_tree_counts_are_catalan(k):
    assert len(enumerate_trees(k)) == catalan(k)


def test_tree_structure_invariants():
    for k in range(0, 6):
        for tree in enumerate_trees(k):
            assert len(tree.children[0]) == 1
            assert len(tree.splits) == k
            assert len(tree.leaves) == k + 1
            for v in tree.splits:
                assert len(tree.children[v]) == 2
            for v in tree.leaves:
                assert tree.children[v] == ()
            # preorder ids: every child id exceeds its parent's
            for u, v in tree.edges:
                assert u < v


def test_encoding_round_trip_and_order():
    for k in range(0, 7):
        trees = enumerate_trees(k)
        encodings = [t.encoding for t in trees]
        assert encodings == sorted(encodings)
        assert len(set(encodings)) == len(encodings)
        for t in trees:
            assert tree_from_encoding(t.encoding).encoding == t.encoding


def test_encoding_rejects_garbage():
    for bad in ["", "(*,*", "(*)", "**", "(*,*))", "(,*)"]:
        with pytest.raises(ParameterError):
            tree_from_encoding(bad)


def test_numbering_monotone_along_edges():
    for k in range(0, 6):
        for tree in enumerate_trees(k):
            numberings = enumerate_numberings(tree)
            assert len(numberings) >= 1
            seen = set()
            for num in numberings:
                labels = tuple(num.labels)
                assert labels not in seen
                seen.add(labels)
                used = sorted(num.labels[v] for v in (0, *tree.splits))
                assert used == list(range(k + 1))
                for u, v in tree.edges:
                    assert num.label_of(u, k) < num.label_of(v, k)


def test_caterpillar_has_one_numbering():
    # chain of three splits: the split order is forced
    tree = tree_from_encoding("(((*,*),*),*)")
    assert tree.k == 3
    assert len(enumerate_numberings(tree)) == 1


def test_balanced_tree_has_two_numberings():
    # root child splits into two splitting vertices, which commute
    tree = tree_from_encoding("((*,*),(*,*))")
    assert tree.k == 3
    assert len(enumerate_numberings(tree)) == 2


def test_coefficient_base_and_small_values():
    for n in range(1, 8):
        assert c_coeff(0, n) == 1
    assert c_coeff(1, 2) == 2
    assert c_coeff(1, 3) == 6
    assert c_coeff(2, 3) == 6


def test_coefficient_convolution_identity():
    # c(k, n) = sum over first-branch sizes l of C(n, l) c(k1, l) c(k-k1-1, n-l)
    for n in range(2, 11):
        for k in range(1, n):
            for k1 in range(0, k):
                k2 = k - k1 - 1
                total = sum(
                    math.comb(n, l) * c_coeff(k1, l) * c_coeff(k2, n - l)
                    for l in range(k1 + 1, n - k2)
                )
                assert total == c_coeff(k, n)


def test_coefficient_domain_errors():
    with pytest.raises(DomainError):
        c_coeff(2, 2)
    with pytest.raises(DomainError):
        c_coeff(-1, 3)
    with pytest.raises(DomainError):
        c_coeff(0, 0)


def test_level_cap():
    with pytest.raises(CapacityError):
        enumerate_trees(13)
    with pytest.raises(DomainError):
        enumerate_trees(-1)


def test_term_index_matches_enumeration():
    for n in range(1, 6):
        terms = term_index(n)
        expected = sum(
            len(enumerate_numberings(t)) for k in range(n) for t in enumerate_trees(k)
        )
        assert len(terms) == expected
        assert all(0 <= k < n for k, _, _ in terms)
