# Table.py


def render_table(header: list[str], rows: list[list[str]], align: str = "") -> str:
    """Render rows as plain text columns separated by two spaces.

    ``align`` holds one character per column, "l" or "r"; missing ones are "l".
    Trailing spaces are stripped so the output is stable under diff.
    """
    table = [list(map(str, header))] + [list(map(str, row)) for row in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    align = align.ljust(len(header), "l")
    lines = []
    for row in table:
        cells = [cell.rjust(width) if side == "r" else cell.ljust(width)
                 for cell, width, side in zip(row, widths, align)]
        lines.append("  ".join(cells).rstrip())
    return "".join(f"{line}\n" for line in lines)
