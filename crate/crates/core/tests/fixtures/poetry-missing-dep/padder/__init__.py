from leftpad import leftpad


def column(values, width):
    return [leftpad(str(v), width) for v in values]
