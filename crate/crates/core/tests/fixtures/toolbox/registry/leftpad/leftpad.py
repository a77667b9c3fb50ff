def leftpad(s, width, fill=" "):
    return fill * max(0, width - len(s)) + s
