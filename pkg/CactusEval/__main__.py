# __main__.py

from CactusEval.cli import main

if __name__ == "__main__":
    main()
