from padder import column


def test_column():
    assert column([1, 22], 3) == ["  1", " 22"]
