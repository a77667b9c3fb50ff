import pathlib

pathlib.Path(".state").mkdir(exist_ok=True)
pathlib.Path(".state/ready").write_text("ready\n")
