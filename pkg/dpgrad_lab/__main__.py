from dpgrad_lab.main import main

main()
