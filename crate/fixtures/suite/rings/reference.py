# stub-interpreter reference script
copy seed.txt seed-staged.txt
print staged seed.txt
emit rings 16 16 out.png
print wrote out.png
