from kgengine.cli import main

main()
