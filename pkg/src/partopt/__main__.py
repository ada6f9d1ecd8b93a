from partopt.cli import main

main()
